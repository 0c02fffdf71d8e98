//! Per-agent decoupled subproblems in the step variable `s_i`:
//!
//! `min f_i(x_i + s, x_N) + ρ/2 ‖s‖² + cᵀs  s.t.  g_i(x_i + s, x_N) = 0,  h_i(x_i + s, x_N) <= 0`
//!
//! with neighbor values frozen and `c = Σ_{j∈N_i} ∇_{x_i} L_j`.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::ipm::{self, IpmError, IpmOptions, SmoothNlp};
use crate::linalg::{
    inf_norm, inf_norm_slice, min_row_singular_value, min_sym_eigenvalue, null_space, Matrix,
    Vector,
};
use crate::model::{AgentOracle, ModelError, PrimalDualPoint, ProblemGraph};

/// Threshold separating active from inactive inequalities.
pub const ACTIVE_TAU: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("agent {agent}: missing sensitivity from neighbor {neighbor}")]
    MissingSensitivity { agent: usize, neighbor: usize },
    #[error("agent {agent}: sensitivity from non-neighbor {from}")]
    UnexpectedSensitivity { agent: usize, from: usize },
    #[error("agent {agent}: local subproblem infeasible (residual {residual:e})")]
    Infeasible { agent: usize, residual: f64 },
    #[error("agent {agent}: local solver failed after {iterations} iterations (best residual {:e})", best.kkt_residual)]
    SolverFailure {
        agent: usize,
        iterations: usize,
        best: Box<LocalSolution>,
    },
    #[error("agent {agent}: local solver breakdown: {source}")]
    Breakdown { agent: usize, source: IpmError },
}

/// Regularity witnesses of a local solution: smallest singular value of the
/// active own-variable constraint Jacobian and smallest reduced Hessian eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalRegularity {
    pub licq_min_sv: f64,
    pub sosc_min_eig: f64,
}

impl LocalRegularity {
    pub fn holds(&self) -> bool {
        self.licq_min_sv > 1e-8 && self.sosc_min_eig > 1e-8
    }
}

/// `y_i = (s_i, ν_i, κ_i)` plus solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub s: Vector,
    pub nu: Vector,
    pub kappa: Vector,
    pub kkt_residual: f64,
    /// Global inequality indices classified active.
    pub active_set: Vec<usize>,
    /// Global indices where both `κ_k` and `h_k` are below the threshold.
    pub degenerate: Vec<usize>,
    pub solver_iterations: usize,
    pub regularity: LocalRegularity,
}

impl LocalSolution {
    /// Solution with no solver metadata, for driving updates directly.
    pub fn new(s: Vector, nu: Vector, kappa: Vector) -> Self {
        Self {
            s,
            nu,
            kappa,
            kkt_residual: 0.0,
            active_set: Vec::new(),
            degenerate: Vec::new(),
            solver_iterations: 0,
            regularity: LocalRegularity {
                licq_min_sv: f64::INFINITY,
                sosc_min_eig: f64::INFINITY,
            },
        }
    }

    pub fn stacked(&self) -> Vector {
        let (n, ng, nh) = (self.s.len(), self.nu.len(), self.kappa.len());
        let mut v = Vector::zeros(n + ng + nh);
        v.rows_mut(0, n).copy_from(&self.s);
        v.rows_mut(n, ng).copy_from(&self.nu);
        v.rows_mut(n + ng, nh).copy_from(&self.kappa);
        v
    }
}

/// Active and degenerate inequality indices (global numbering).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub degenerate: Vec<usize>,
}

#[derive(Clone)]
pub struct LocalNlp {
    pub agent: usize,
    pub dim: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    /// `[x_i^q; x_{N_i}^q]`.
    pub z_base: Vec<f64>,
    pub rho: f64,
    /// `c_i = Σ_j ∇_{x_i} L_j^q`.
    pub sensitivity: Vector,
    h_offset: usize,
    oracle: Arc<dyn AgentOracle>,
}

impl std::fmt::Debug for LocalNlp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalNlp")
            .field("agent", &self.agent)
            .field("z_base", &self.z_base)
            .field("rho", &self.rho)
            .field("sensitivity", &self.sensitivity)
            .finish()
    }
}

impl LocalNlp {
    pub fn new(
        graph: &ProblemGraph,
        agent: usize,
        z_base: Vec<f64>,
        rho: f64,
        sensitivity: Vector,
    ) -> Result<Self, LocalError> {
        let spec = graph.agent(agent);
        if z_base.len() != graph.z_dim(agent) {
            return Err(ModelError::Dimension {
                what: format!("local vector of agent {agent}"),
                expected: graph.z_dim(agent),
                got: z_base.len(),
            }
            .into());
        }
        if sensitivity.len() != spec.dim {
            return Err(ModelError::Dimension {
                what: format!("sensitivity of agent {agent}"),
                expected: spec.dim,
                got: sensitivity.len(),
            }
            .into());
        }
        Ok(Self {
            agent,
            dim: spec.dim,
            n_eq: spec.n_eq,
            n_ineq: spec.n_ineq,
            z_base,
            rho,
            sensitivity,
            h_offset: graph.h_range(agent).start,
            oracle: spec.oracle.clone(),
        })
    }

    pub fn oracle(&self) -> &dyn AgentOracle {
        self.oracle.as_ref()
    }

    pub fn shifted_z(&self, s: &Vector) -> Vec<f64> {
        let mut z = self.z_base.clone();
        for k in 0..self.dim {
            z[k] += s[k];
        }
        z
    }

    pub fn objective(&self, s: &Vector) -> f64 {
        self.oracle.objective(&self.shifted_z(s))
            + 0.5 * self.rho * s.norm_squared()
            + self.sensitivity.dot(s)
    }

    /// Jacobian of the equalities with respect to the whole local vector.
    pub fn full_eq_jacobian(&self, s: &Vector) -> Matrix {
        if self.n_eq == 0 {
            return Matrix::zeros(0, self.z_base.len());
        }
        self.oracle.equality_jacobian(&self.shifted_z(s))
    }

    pub fn full_ineq_jacobian(&self, s: &Vector) -> Matrix {
        if self.n_ineq == 0 {
            return Matrix::zeros(0, self.z_base.len());
        }
        self.oracle.inequality_jacobian(&self.shifted_z(s))
    }

    /// `∇²_{ss} L̄_i` including the `ρ I` term.
    pub fn hessian(&self, s: &Vector, nu: &Vector, kappa: &Vector) -> Matrix {
        let z = self.shifted_z(s);
        let n = self.dim;
        let mut hess = self.oracle.objective_hessian_own(&z, n);
        if self.n_eq > 0 {
            hess += self
                .oracle
                .equality_hessian(&z, nu.as_slice())
                .view((0, 0), (n, n));
        }
        if self.n_ineq > 0 {
            hess += self
                .oracle
                .inequality_hessian(&z, kappa.as_slice())
                .view((0, 0), (n, n));
        }
        for k in 0..n {
            hess[(k, k)] += self.rho;
        }
        hess
    }

    fn regularity(
        &self,
        s: &Vector,
        nu: &Vector,
        kappa: &Vector,
        active_local: &[usize],
    ) -> LocalRegularity {
        let jg = self.eq_jacobian(s);
        let jh = self.ineq_jacobian(s);
        let rows = jg.nrows() + active_local.len();
        let mut j = Matrix::zeros(rows, self.dim);
        j.view_mut((0, 0), (jg.nrows(), self.dim)).copy_from(&jg);
        for (r, &k) in active_local.iter().enumerate() {
            j.set_row(jg.nrows() + r, &jh.row(k));
        }
        let z = null_space(&j, 1e-10);
        let hess = self.hessian(s, nu, kappa);
        LocalRegularity {
            licq_min_sv: min_row_singular_value(&j),
            sosc_min_eig: if z.ncols() == 0 {
                f64::INFINITY
            } else {
                min_sym_eigenvalue(&(z.transpose() * hess * &z))
            },
        }
    }
}

impl SmoothNlp for LocalNlp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_eq(&self) -> usize {
        self.n_eq
    }

    fn n_ineq(&self) -> usize {
        self.n_ineq
    }

    fn gradient(&self, s: &Vector) -> Vector {
        let full = self.oracle.objective_gradient(&self.shifted_z(s));
        full.rows(0, self.dim) + s * self.rho + &self.sensitivity
    }

    fn equalities(&self, s: &Vector) -> Vector {
        if self.n_eq == 0 {
            return Vector::zeros(0);
        }
        self.oracle.equalities(&self.shifted_z(s))
    }

    fn inequalities(&self, s: &Vector) -> Vector {
        if self.n_ineq == 0 {
            return Vector::zeros(0);
        }
        self.oracle.inequalities(&self.shifted_z(s))
    }

    fn eq_jacobian(&self, s: &Vector) -> Matrix {
        self.full_eq_jacobian(s).columns(0, self.dim).into_owned()
    }

    fn ineq_jacobian(&self, s: &Vector) -> Matrix {
        self.full_ineq_jacobian(s).columns(0, self.dim).into_owned()
    }

    fn lagrangian_hessian(&self, s: &Vector, lambda: &Vector, mu: &Vector) -> Matrix {
        self.hessian(s, lambda, mu)
    }
}

/// Builds agent `i`'s subproblem at `point` from the received sensitivities.
pub fn assemble_local_nlp(
    graph: &ProblemGraph,
    agent: usize,
    point: &PrimalDualPoint,
    rho: f64,
    sensitivities: &BTreeMap<usize, Vector>,
) -> Result<LocalNlp, LocalError> {
    if let Some(&from) = sensitivities
        .keys()
        .find(|&&j| !graph.is_neighbor(agent, j))
    {
        return Err(LocalError::UnexpectedSensitivity { agent, from });
    }
    let mut c = Vector::zeros(graph.agent(agent).dim);
    for &j in graph.neighbors(agent) {
        let v = sensitivities
            .get(&j)
            .ok_or(LocalError::MissingSensitivity { agent, neighbor: j })?;
        if v.len() != c.len() {
            return Err(ModelError::Dimension {
                what: format!("sensitivity {j} -> {agent}"),
                expected: c.len(),
                got: v.len(),
            }
            .into());
        }
        c += v;
    }
    LocalNlp::new(graph, agent, graph.gather_z(agent, &point.x), rho, c)
}

/// Max-norm KKT residual of the local system at `(s, ν, κ)`.
pub fn local_kkt_residual(nlp: &LocalNlp, s: &Vector, nu: &Vector, kappa: &Vector) -> f64 {
    ipm::kkt_residual(nlp, s, nu, kappa)
}

/// Classifies inequalities: active when `κ_k > τ` or `|h̄_k(s)| <= τ`;
/// degenerate when both `κ_k <= τ` and `|h̄_k(s)| <= τ`.
pub fn active_set(nlp: &LocalNlp, s: &Vector, kappa: &Vector, tau: f64) -> ActiveSet {
    let h = nlp.inequalities(s);
    let mut out = ActiveSet::default();
    for k in 0..h.len() {
        let near = h[k].abs() <= tau;
        if kappa[k] > tau || near {
            out.indices.push(nlp.h_offset + k);
        }
        if near && kappa[k] <= tau {
            out.degenerate.push(nlp.h_offset + k);
        }
    }
    out
}

fn package(nlp: &LocalNlp, sol: ipm::IpmSolution) -> LocalSolution {
    let act = active_set(nlp, &sol.x, &sol.mu, ACTIVE_TAU);
    let local: Vec<usize> = act.indices.iter().map(|k| k - nlp.h_offset).collect();
    let regularity = nlp.regularity(&sol.x, &sol.lambda, &sol.mu, &local);
    LocalSolution {
        kkt_residual: sol.kkt_residual,
        active_set: act.indices,
        degenerate: act.degenerate,
        solver_iterations: sol.iterations,
        regularity,
        s: sol.x,
        nu: sol.lambda,
        kappa: sol.mu,
    }
}

/// Solves the subproblem from `s = 0` to KKT residual `tol`. A warm start
/// reuses the previous multipliers; on failure the solve is retried cold.
pub fn solve_local_nlp(
    nlp: &LocalNlp,
    warm: Option<&LocalSolution>,
    tol: f64,
) -> Result<LocalSolution, LocalError> {
    // Absolute tolerance at unit scale, relative once the data grows.
    let scale = [inf_norm_slice(&nlp.z_base), inf_norm(&nlp.sensitivity)]
        .into_iter()
        .fold(1.0, f64::max);
    let opts = IpmOptions {
        tol: tol * scale,
        ..IpmOptions::default()
    };
    let s0 = Vector::zeros(nlp.dim);
    let warm = warm.filter(|w| w.nu.len() == nlp.n_eq && w.kappa.len() == nlp.n_ineq);
    let mut result = ipm::solve(nlp, &s0, warm.map(|w| (&w.nu, &w.kappa)), &opts);
    if warm.is_some() && result.is_err() {
        result = ipm::solve(nlp, &s0, None, &opts);
    }
    let agent = nlp.agent;
    match result {
        Ok(sol) => Ok(package(nlp, sol)),
        Err(IpmError::MaxIterations { iterations, best }) => Err(LocalError::SolverFailure {
            agent,
            iterations,
            best: Box::new(package(nlp, *best)),
        }),
        Err(IpmError::Infeasible { residual }) => Err(LocalError::Infeasible { agent, residual }),
        Err(source) => Err(LocalError::Breakdown { agent, source }),
    }
}

/// Step size of the local solution in the max norm.
pub fn step_norm(y: &LocalSolution) -> f64 {
    inf_norm(&y.s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AgentSpec;
    use approx::assert_relative_eq;

    struct Sq;
    impl AgentOracle for Sq {
        fn objective(&self, z: &[f64]) -> f64 {
            z[0] * z[0]
        }
    }

    /// f = (x - 1)², h = 0.5 - x <= 0 with one neighbor entering the objective.
    struct Bounded;
    impl AgentOracle for Bounded {
        fn objective(&self, z: &[f64]) -> f64 {
            (z[0] - 1.0).powi(2) + z[0] * z[1]
        }
        fn inequalities(&self, z: &[f64]) -> Vector {
            Vector::from_vec(vec![-z[0] - 0.5])
        }
    }

    #[test]
    fn unconstrained_square() {
        let g = ProblemGraph::new(vec![AgentSpec::new(1, vec![], Arc::new(Sq))]).unwrap();
        let nlp = LocalNlp::new(&g, 0, vec![0.0], 0.0, Vector::zeros(1)).unwrap();
        let y = solve_local_nlp(&nlp, None, 1e-10).unwrap();
        assert!(y.s[0].abs() < 1e-9);
        assert!(local_kkt_residual(&nlp, &y.s, &y.nu, &y.kappa) <= 1e-10);
    }

    #[test]
    fn missing_and_foreign_sensitivities() {
        let g = ProblemGraph::new(vec![
            AgentSpec::new(1, vec![1], Arc::new(Bounded)).with_inequalities(1, 1),
            AgentSpec::new(1, vec![0], Arc::new(Sq)),
        ])
        .unwrap();
        let p = PrimalDualPoint::zeros(&g);
        let err = assemble_local_nlp(&g, 0, &p, 0.0, &BTreeMap::new()).unwrap_err();
        assert_eq!(
            err,
            LocalError::MissingSensitivity {
                agent: 0,
                neighbor: 1
            }
        );
        let mut sens = BTreeMap::new();
        sens.insert(0, Vector::zeros(1));
        let err = assemble_local_nlp(&g, 1, &p, 0.0, &sens).unwrap();
        assert_eq!(err.sensitivity.len(), 1);
        sens.insert(1, Vector::zeros(1));
        assert!(matches!(
            assemble_local_nlp(&g, 1, &p, 0.0, &sens),
            Err(LocalError::UnexpectedSensitivity { .. })
        ));
    }

    #[test]
    fn active_bound_from_sensitivity() {
        let g = ProblemGraph::new(vec![
            AgentSpec::new(1, vec![1], Arc::new(Bounded)).with_inequalities(1, 1),
            AgentSpec::new(1, vec![0], Arc::new(Sq)),
        ])
        .unwrap();
        // (s - 1)² + 5s is minimized at s = -1.5; the bound stops it at -0.5.
        let nlp = LocalNlp::new(&g, 0, vec![0.0, 0.0], 0.0, Vector::from_element(1, 5.0)).unwrap();
        let y = solve_local_nlp(&nlp, None, 1e-10).unwrap();
        assert_relative_eq!(y.s[0], -0.5, epsilon = 1e-8);
        // Stationarity: 2(s-1) + 5 - κ = 0 → κ = 2.
        assert_relative_eq!(y.kappa[0], 2.0, epsilon = 1e-7);
        assert_eq!(y.active_set, vec![0]);
        assert!(y.degenerate.is_empty());
        assert!(y.regularity.holds());
    }

    #[test]
    fn interior_point_has_empty_active_set() {
        let g = ProblemGraph::new(vec![
            AgentSpec::new(1, vec![1], Arc::new(Bounded)).with_inequalities(1, 1),
            AgentSpec::new(1, vec![0], Arc::new(Sq)),
        ])
        .unwrap();
        let nlp = LocalNlp::new(&g, 0, vec![0.0, 0.0], 0.0, Vector::zeros(1)).unwrap();
        let act = active_set(&nlp, &Vector::zeros(1), &Vector::zeros(1), ACTIVE_TAU);
        assert!(act.indices.is_empty());
    }
}
