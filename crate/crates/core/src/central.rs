//! Centralized reference solver: the whole graph-structured NLP handed to the
//! dense interior-point method. Used as the oracle for `p*`.

use crate::ipm::{self, IpmError, IpmOptions, SmoothNlp};
use crate::linalg::{Matrix, Vector};
use crate::model::{
    central_equalities, central_hessian, central_inequalities, central_jacobians, PrimalDualPoint,
    ProblemGraph,
};

pub struct CentralNlp<'a> {
    graph: &'a ProblemGraph,
}

impl<'a> CentralNlp<'a> {
    pub fn new(graph: &'a ProblemGraph) -> Self {
        Self { graph }
    }
}

impl SmoothNlp for CentralNlp<'_> {
    fn dim(&self) -> usize {
        self.graph.n()
    }

    fn n_eq(&self) -> usize {
        self.graph.n_g()
    }

    fn n_ineq(&self) -> usize {
        self.graph.n_h()
    }

    fn gradient(&self, x: &Vector) -> Vector {
        let mut grad = Vector::zeros(self.graph.n());
        for i in 0..self.graph.num_agents() {
            let local = self
                .graph
                .agent(i)
                .oracle
                .objective_gradient(&self.graph.gather_z(i, x));
            for (c, k) in self.graph.z_global_indices(i).into_iter().enumerate() {
                grad[k] += local[c];
            }
        }
        grad
    }

    fn equalities(&self, x: &Vector) -> Vector {
        central_equalities(self.graph, x)
    }

    fn inequalities(&self, x: &Vector) -> Vector {
        central_inequalities(self.graph, x)
    }

    fn eq_jacobian(&self, x: &Vector) -> Matrix {
        central_jacobians(self.graph, x).0
    }

    fn ineq_jacobian(&self, x: &Vector) -> Matrix {
        central_jacobians(self.graph, x).1
    }

    fn lagrangian_hessian(&self, x: &Vector, lambda: &Vector, mu: &Vector) -> Matrix {
        let p = PrimalDualPoint {
            x: x.clone(),
            lambda: lambda.clone(),
            mu: mu.clone(),
        };
        central_hessian(self.graph, &p)
    }
}

/// Solves the central NLP from `x0` to KKT residual `tol`.
pub fn solve_central(
    graph: &ProblemGraph,
    x0: &Vector,
    tol: f64,
) -> Result<PrimalDualPoint, IpmError> {
    let opts = IpmOptions {
        tol,
        max_iter: 500,
        ..IpmOptions::default()
    };
    let sol = ipm::solve(&CentralNlp::new(graph), x0, None, &opts)?;
    Ok(PrimalDualPoint {
        x: sol.x,
        lambda: sol.lambda,
        mu: sol.mu,
    })
}
