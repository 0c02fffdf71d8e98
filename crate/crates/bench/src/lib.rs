pub mod admm;
pub mod catalog;
pub mod logreg;
pub mod runner;
pub mod scenario;
