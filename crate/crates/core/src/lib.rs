//! Sensitivity-based distributed nonlinear programming.
//!
//! The crate solves NLPs whose objective and constraints are structured over an
//! undirected coupling graph of agents. Each agent owns a block of decision
//! variables together with the multipliers of its own constraints, solves a
//! small decoupled subproblem per iteration, and exchanges first-order
//! sensitivities and decision variables with its neighbors only.
//!
//! Module map:
//!
//! * [`model`]: problem graphs, agent oracles, primal-dual points, central KKT residuals.
//! * [`local_nlp`]: per-agent decoupled subproblems and their interior-point solver.
//! * [`engine`]: the synchronous iteration (primal-dual mixing update and variants).
//! * [`netsim`]: the simulated neighbor-to-neighbor network with float accounting.
//! * [`analysis`]: linearized iteration matrices, step-size and rate certificates.
//! * [`central`]: a centralized dense interior-point reference solver.
//! * [`problems`]: the small built-in test problems.

pub mod analysis;
pub mod central;
pub mod engine;
pub mod ipm;
pub mod linalg;
pub mod local_nlp;
pub mod model;
pub mod netsim;
pub mod problems;

pub use engine::{run, EngineConfig, EngineError, IterationTrace, TraceStatus, Variant};
pub use linalg::{Matrix, Vector};
pub use local_nlp::{LocalNlp, LocalSolution};
pub use model::{AgentOracle, AgentSpec, ModelError, PrimalDualPoint, ProblemGraph};
pub use netsim::{CommLedger, Message, MessageKind, NetworkSim};
