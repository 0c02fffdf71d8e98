//! Graph-structured NLP instances, primal-dual points and central KKT quantities.
//!
//! Agent `i` owns `x_i` and the constraints `g_i(x_i, x_{N_i}) = 0`,
//! `h_i(x_i, x_{N_i}) <= 0` together with their multipliers. All oracles of
//! agent `i` are evaluated on the local vector `z = [x_i; x_{j_1}; ...; x_{j_k}]`
//! where `j_1 < ... < j_k` are the neighbors of `i`.

use std::collections::{BTreeSet, VecDeque};
use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{inf_norm, max_abs, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("problem has no agents")]
    Empty,
    #[error("agent {0} lists itself as a neighbor")]
    SelfLoop(usize),
    #[error("agent {0} lists unknown neighbor {1}")]
    UnknownAgent(usize, usize),
    #[error("edge ({0}, {1}) is not symmetric")]
    Asymmetric(usize, usize),
    #[error("agent {0} lists neighbor {1} twice")]
    DuplicateNeighbor(usize, usize),
    #[error("coupling graph is not connected")]
    Disconnected,
    #[error("agent {agent} is not a neighbor of agent {of}")]
    NotNeighbor { agent: usize, of: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("agent {agent}: {what}")]
    Oracle { agent: usize, what: String },
}

fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, z: &[f64]) -> Vector {
    let mut zz = z.to_vec();
    Vector::from_iterator(
        z.len(),
        (0..z.len()).map(|k| {
            let h = fd_step(z[k]);
            zz[k] = z[k] + h;
            let fp = f(&zz);
            zz[k] = z[k] - h;
            let fm = f(&zz);
            zz[k] = z[k];
            (fp - fm) / (2.0 * h)
        }),
    )
}

/// Central-difference Jacobian (`rows x z.len()`) of a vector function.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vector, z: &[f64], rows: usize) -> Matrix {
    let mut jac = Matrix::zeros(rows, z.len());
    let mut zz = z.to_vec();
    for k in 0..z.len() {
        let h = fd_step(z[k]);
        zz[k] = z[k] + h;
        let fp = f(&zz);
        zz[k] = z[k] - h;
        let fm = f(&zz);
        zz[k] = z[k];
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    jac
}

fn symmetrize(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

/// Function oracle of one agent, evaluated on `z = [x_i; x_{N_i}]`.
///
/// Only values are mandatory. Derivatives default to central finite
/// differences with step `1e-6 (1 + |z_k|)`; built-in problems override them
/// analytically and [`finite_difference_audit`] checks overrides.
pub trait AgentOracle: Send + Sync {
    fn objective(&self, z: &[f64]) -> f64;

    fn equalities(&self, _z: &[f64]) -> Vector {
        Vector::zeros(0)
    }

    fn inequalities(&self, _z: &[f64]) -> Vector {
        Vector::zeros(0)
    }

    fn objective_gradient(&self, z: &[f64]) -> Vector {
        fd_gradient(|v| self.objective(v), z)
    }

    fn objective_hessian(&self, z: &[f64]) -> Matrix {
        symmetrize(fd_jacobian(|v| self.objective_gradient(v), z, z.len()))
    }

    /// Leading `n_own x n_own` block of the objective Hessian.
    fn objective_hessian_own(&self, z: &[f64], n_own: usize) -> Matrix {
        self.objective_hessian(z)
            .view((0, 0), (n_own, n_own))
            .into_owned()
    }

    fn equality_jacobian(&self, z: &[f64]) -> Matrix {
        let rows = self.equalities(z).len();
        fd_jacobian(|v| self.equalities(v), z, rows)
    }

    fn inequality_jacobian(&self, z: &[f64]) -> Matrix {
        let rows = self.inequalities(z).len();
        fd_jacobian(|v| self.inequalities(v), z, rows)
    }

    /// `sum_k w_k ∇²g_k(z)`.
    fn equality_hessian(&self, z: &[f64], w: &[f64]) -> Matrix {
        let wv = Vector::from_column_slice(w);
        symmetrize(fd_jacobian(
            |v| self.equality_jacobian(v).tr_mul(&wv),
            z,
            z.len(),
        ))
    }

    /// `sum_k w_k ∇²h_k(z)`.
    fn inequality_hessian(&self, z: &[f64], w: &[f64]) -> Matrix {
        let wv = Vector::from_column_slice(w);
        symmetrize(fd_jacobian(
            |v| self.inequality_jacobian(v).tr_mul(&wv),
            z,
            z.len(),
        ))
    }
}

/// Declaration of one agent's subproblem.
#[derive(Clone)]
pub struct AgentSpec {
    pub dim: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    /// Neighbor ids; normalized to ascending order by [`ProblemGraph::new`].
    pub neighbors: Vec<usize>,
    pub oracle: Arc<dyn AgentOracle>,
    /// Number of leading equality rows that depend on `x_i` only.
    pub decoupled_eq: usize,
    /// Number of leading inequality rows that depend on `x_i` only.
    pub decoupled_ineq: usize,
}

impl std::fmt::Debug for AgentSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentSpec")
            .field("dim", &self.dim)
            .field("n_eq", &self.n_eq)
            .field("n_ineq", &self.n_ineq)
            .field("neighbors", &self.neighbors)
            .field("decoupled_eq", &self.decoupled_eq)
            .field("decoupled_ineq", &self.decoupled_ineq)
            .finish()
    }
}

impl AgentSpec {
    pub fn new(dim: usize, neighbors: Vec<usize>, oracle: Arc<dyn AgentOracle>) -> Self {
        Self {
            dim,
            n_eq: 0,
            n_ineq: 0,
            neighbors,
            oracle,
            decoupled_eq: 0,
            decoupled_ineq: 0,
        }
    }

    pub fn with_equalities(mut self, count: usize, decoupled: usize) -> Self {
        self.n_eq = count;
        self.decoupled_eq = decoupled;
        self
    }

    pub fn with_inequalities(mut self, count: usize, decoupled: usize) -> Self {
        self.n_ineq = count;
        self.decoupled_ineq = decoupled;
        self
    }

    pub fn constraints_decoupled(&self) -> bool {
        self.decoupled_eq == self.n_eq && self.decoupled_ineq == self.n_ineq
    }
}

/// Agents, coupling edges and the global index layout.
#[derive(Debug, Clone)]
pub struct ProblemGraph {
    agents: Vec<AgentSpec>,
    x_off: Vec<usize>,
    g_off: Vec<usize>,
    h_off: Vec<usize>,
    neighbor_affine: bool,
}

fn offsets(sizes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

impl ProblemGraph {
    pub fn new(mut agents: Vec<AgentSpec>) -> Result<Self, ModelError> {
        if agents.is_empty() {
            return Err(ModelError::Empty);
        }
        let m = agents.len();
        for (i, a) in agents.iter_mut().enumerate() {
            a.neighbors.sort_unstable();
            for w in a.neighbors.windows(2) {
                if w[0] == w[1] {
                    return Err(ModelError::DuplicateNeighbor(i, w[0]));
                }
            }
            for &j in &a.neighbors {
                if j == i {
                    return Err(ModelError::SelfLoop(i));
                }
                if j >= m {
                    return Err(ModelError::UnknownAgent(i, j));
                }
            }
            if a.decoupled_eq > a.n_eq || a.decoupled_ineq > a.n_ineq {
                return Err(ModelError::Oracle {
                    agent: i,
                    what: "more decoupled rows than constraints".into(),
                });
            }
        }
        for i in 0..m {
            for &j in &agents[i].neighbors {
                if agents[j].neighbors.binary_search(&i).is_err() {
                    return Err(ModelError::Asymmetric(i, j));
                }
            }
        }
        let graph = Self {
            x_off: offsets(agents.iter().map(|a| a.dim)),
            g_off: offsets(agents.iter().map(|a| a.n_eq)),
            h_off: offsets(agents.iter().map(|a| a.n_ineq)),
            agents,
            neighbor_affine: false,
        };
        if graph.diameter().is_none() {
            return Err(ModelError::Disconnected);
        }
        graph.check_oracle_dimensions(&Vector::zeros(graph.n()))?;
        Ok(graph)
    }

    /// Marks the problem as neighbor-affine: every `∇_{x_i} L_j` can be
    /// evaluated by agent `i` from `x_i`, `x_j`, `λ_j`, `μ_j` alone.
    pub fn with_neighbor_affine(mut self, flag: bool) -> Self {
        self.neighbor_affine = flag;
        self
    }

    pub fn neighbor_affine(&self) -> bool {
        self.neighbor_affine
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentSpec {
        &self.agents[i]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.agents[i].neighbors
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        i < self.agents.len() && self.agents[i].neighbors.binary_search(&j).is_ok()
    }

    pub fn n(&self) -> usize {
        *self.x_off.last().unwrap()
    }

    pub fn n_g(&self) -> usize {
        *self.g_off.last().unwrap()
    }

    pub fn n_h(&self) -> usize {
        *self.h_off.last().unwrap()
    }

    /// Length of the stacked primal-dual vector.
    pub fn p_dim(&self) -> usize {
        self.n() + self.n_g() + self.n_h()
    }

    pub fn x_range(&self, i: usize) -> Range<usize> {
        self.x_off[i]..self.x_off[i + 1]
    }

    pub fn g_range(&self, i: usize) -> Range<usize> {
        self.g_off[i]..self.g_off[i + 1]
    }

    pub fn h_range(&self, i: usize) -> Range<usize> {
        self.h_off[i]..self.h_off[i + 1]
    }

    pub fn all_constraints_decoupled(&self) -> bool {
        self.agents.iter().all(AgentSpec::constraints_decoupled)
    }

    /// Unordered edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            out.extend(a.neighbors.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// Graph diameter, or `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let m = self.agents.len();
        let mut diam = 0;
        for src in 0..m {
            let mut dist = vec![usize::MAX; m];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.agents[u].neighbors {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            let far = *dist.iter().max().unwrap();
            if far == usize::MAX {
                return None;
            }
            diam = diam.max(far);
        }
        Some(diam)
    }

    /// Length of agent `i`'s local vector `z`.
    pub fn z_dim(&self, i: usize) -> usize {
        self.agents[i].dim
            + self.agents[i]
                .neighbors
                .iter()
                .map(|&j| self.agents[j].dim)
                .sum::<usize>()
    }

    /// `(agent, offset in z)` for the blocks of agent `i`'s local vector.
    pub fn z_layout(&self, i: usize) -> Vec<(usize, usize)> {
        let mut out = vec![(i, 0)];
        let mut off = self.agents[i].dim;
        for &j in &self.agents[i].neighbors {
            out.push((j, off));
            off += self.agents[j].dim;
        }
        out
    }

    /// Offset of agent `j`'s block inside agent `i`'s local vector.
    pub fn z_offset(&self, i: usize, j: usize) -> Option<usize> {
        self.z_layout(i)
            .into_iter()
            .find(|&(a, _)| a == j)
            .map(|(_, off)| off)
    }

    /// Global `x` index of every entry of agent `i`'s local vector.
    pub fn z_global_indices(&self, i: usize) -> Vec<usize> {
        self.z_layout(i)
            .into_iter()
            .flat_map(|(a, _)| self.x_range(a))
            .collect()
    }

    pub fn gather_z(&self, i: usize, x: &Vector) -> Vec<f64> {
        self.z_global_indices(i).into_iter().map(|k| x[k]).collect()
    }

    fn check_oracle_dimensions(&self, x: &Vector) -> Result<(), ModelError> {
        for (i, a) in self.agents.iter().enumerate() {
            let z = self.gather_z(i, x);
            let ng = a.oracle.equalities(&z).len();
            if ng != a.n_eq {
                return Err(ModelError::Dimension {
                    what: format!("equalities of agent {i}"),
                    expected: a.n_eq,
                    got: ng,
                });
            }
            let nh = a.oracle.inequalities(&z).len();
            if nh != a.n_ineq {
                return Err(ModelError::Dimension {
                    what: format!("inequalities of agent {i}"),
                    expected: a.n_ineq,
                    got: nh,
                });
            }
        }
        Ok(())
    }
}

/// Stacked `p = (x, λ, μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: Vector,
    pub lambda: Vector,
    pub mu: Vector,
}

/// Agent-local slice `p_i = (x_i, λ_i, μ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSlice {
    pub x: Vector,
    pub lambda: Vector,
    pub mu: Vector,
}

impl AgentSlice {
    pub fn len(&self) -> usize {
        self.x.len() + self.lambda.len() + self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stacked(&self) -> Vector {
        let mut v = Vector::zeros(self.len());
        let (n, ng) = (self.x.len(), self.lambda.len());
        v.rows_mut(0, n).copy_from(&self.x);
        v.rows_mut(n, ng).copy_from(&self.lambda);
        v.rows_mut(n + ng, self.mu.len()).copy_from(&self.mu);
        v
    }

    pub fn from_stacked(v: &Vector, n: usize, ng: usize, nh: usize) -> Self {
        Self {
            x: v.rows(0, n).into_owned(),
            lambda: v.rows(n, ng).into_owned(),
            mu: v.rows(n + ng, nh).into_owned(),
        }
    }
}

impl PrimalDualPoint {
    pub fn zeros(graph: &ProblemGraph) -> Self {
        Self {
            x: Vector::zeros(graph.n()),
            lambda: Vector::zeros(graph.n_g()),
            mu: Vector::zeros(graph.n_h()),
        }
    }

    pub fn new(
        graph: &ProblemGraph,
        x: Vector,
        lambda: Vector,
        mu: Vector,
    ) -> Result<Self, ModelError> {
        for (what, expected, got) in [
            ("x", graph.n(), x.len()),
            ("lambda", graph.n_g(), lambda.len()),
            ("mu", graph.n_h(), mu.len()),
        ] {
            if expected != got {
                return Err(ModelError::Dimension {
                    what: what.into(),
                    expected,
                    got,
                });
            }
        }
        Ok(Self { x, lambda, mu })
    }

    pub fn from_stacked(graph: &ProblemGraph, p: &Vector) -> Result<Self, ModelError> {
        if p.len() != graph.p_dim() {
            return Err(ModelError::Dimension {
                what: "stacked point".into(),
                expected: graph.p_dim(),
                got: p.len(),
            });
        }
        let (n, ng) = (graph.n(), graph.n_g());
        Ok(Self {
            x: p.rows(0, n).into_owned(),
            lambda: p.rows(n, ng).into_owned(),
            mu: p.rows(n + ng, graph.n_h()).into_owned(),
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.lambda.len() + self.mu.len()
    }

    pub fn stacked(&self) -> Vector {
        AgentSlice {
            x: self.x.clone(),
            lambda: self.lambda.clone(),
            mu: self.mu.clone(),
        }
        .stacked()
    }

    pub fn agent_slice(&self, graph: &ProblemGraph, i: usize) -> AgentSlice {
        let (xr, gr, hr) = (graph.x_range(i), graph.g_range(i), graph.h_range(i));
        AgentSlice {
            x: self.x.rows(xr.start, xr.len()).into_owned(),
            lambda: self.lambda.rows(gr.start, gr.len()).into_owned(),
            mu: self.mu.rows(hr.start, hr.len()).into_owned(),
        }
    }

    pub fn set_agent_slice(&mut self, graph: &ProblemGraph, i: usize, s: &AgentSlice) {
        let (xr, gr, hr) = (graph.x_range(i), graph.g_range(i), graph.h_range(i));
        self.x.rows_mut(xr.start, xr.len()).copy_from(&s.x);
        self.lambda
            .rows_mut(gr.start, gr.len())
            .copy_from(&s.lambda);
        self.mu.rows_mut(hr.start, hr.len()).copy_from(&s.mu);
    }

    /// Indices of `p_i` inside the stacked vector, ordered `x_i, λ_i, μ_i`.
    pub fn agent_indices(graph: &ProblemGraph, i: usize) -> Vec<usize> {
        let (n, ng) = (graph.n(), graph.n_g());
        graph
            .x_range(i)
            .chain(graph.g_range(i).map(|k| n + k))
            .chain(graph.h_range(i).map(|k| n + ng + k))
            .collect()
    }
}

/// `L_i(z, λ_i, μ_i) = f_i + λ_iᵀ g_i + μ_iᵀ h_i`.
pub fn local_lagrangian(oracle: &dyn AgentOracle, z: &[f64], lambda: &Vector, mu: &Vector) -> f64 {
    oracle.objective(z) + oracle.equalities(z).dot(lambda) + oracle.inequalities(z).dot(mu)
}

/// Gradient of `L_i` with respect to the whole local vector `z`.
pub fn local_lagrangian_gradient(
    oracle: &dyn AgentOracle,
    z: &[f64],
    lambda: &Vector,
    mu: &Vector,
) -> Vector {
    let mut grad = oracle.objective_gradient(z);
    if !lambda.is_empty() {
        grad += oracle.equality_jacobian(z).tr_mul(lambda);
    }
    if !mu.is_empty() {
        grad += oracle.inequality_jacobian(z).tr_mul(mu);
    }
    grad
}

/// Hessian of `L_i` with respect to `z`.
pub fn local_lagrangian_hessian(
    oracle: &dyn AgentOracle,
    z: &[f64],
    lambda: &Vector,
    mu: &Vector,
) -> Matrix {
    let mut hess = oracle.objective_hessian(z);
    if !lambda.is_empty() {
        hess += oracle.equality_hessian(z, lambda.as_slice());
    }
    if !mu.is_empty() {
        hess += oracle.inequality_hessian(z, mu.as_slice());
    }
    hess
}

/// Mirrored sensitivity `∇_{x_j} L_i`, evaluated by agent `i` from its own data.
pub fn neighbor_lagrangian_gradient(
    graph: &ProblemGraph,
    i: usize,
    j: usize,
    point: &PrimalDualPoint,
) -> Result<Vector, ModelError> {
    if i >= graph.num_agents() {
        return Err(ModelError::UnknownAgent(i, i));
    }
    if point.dim() != graph.p_dim() {
        return Err(ModelError::Dimension {
            what: "point".into(),
            expected: graph.p_dim(),
            got: point.dim(),
        });
    }
    let off = graph
        .z_offset(i, j)
        .filter(|_| j != i)
        .ok_or(ModelError::NotNeighbor { agent: j, of: i })?;
    let slice = point.agent_slice(graph, i);
    let z = graph.gather_z(i, &point.x);
    let grad =
        local_lagrangian_gradient(graph.agent(i).oracle.as_ref(), &z, &slice.lambda, &slice.mu);
    Ok(grad.rows(off, graph.agent(j).dim).into_owned())
}

pub fn central_objective(graph: &ProblemGraph, x: &Vector) -> f64 {
    (0..graph.num_agents())
        .map(|i| graph.agent(i).oracle.objective(&graph.gather_z(i, x)))
        .sum()
}

pub fn central_equalities(graph: &ProblemGraph, x: &Vector) -> Vector {
    let mut g = Vector::zeros(graph.n_g());
    for i in 0..graph.num_agents() {
        let r = graph.g_range(i);
        g.rows_mut(r.start, r.len())
            .copy_from(&graph.agent(i).oracle.equalities(&graph.gather_z(i, x)));
    }
    g
}

pub fn central_inequalities(graph: &ProblemGraph, x: &Vector) -> Vector {
    let mut h = Vector::zeros(graph.n_h());
    for i in 0..graph.num_agents() {
        let r = graph.h_range(i);
        h.rows_mut(r.start, r.len())
            .copy_from(&graph.agent(i).oracle.inequalities(&graph.gather_z(i, x)));
    }
    h
}

/// `L(x, λ, μ) = f(x) + λᵀ g(x) + μᵀ h(x)` on the stacked functions.
pub fn central_lagrangian(graph: &ProblemGraph, point: &PrimalDualPoint) -> f64 {
    central_objective(graph, &point.x)
        + central_equalities(graph, &point.x).dot(&point.lambda)
        + central_inequalities(graph, &point.x).dot(&point.mu)
}

/// Central Jacobians `(J_g, J_h)` of the stacked constraints.
pub fn central_jacobians(graph: &ProblemGraph, x: &Vector) -> (Matrix, Matrix) {
    let n = graph.n();
    let mut jg = Matrix::zeros(graph.n_g(), n);
    let mut jh = Matrix::zeros(graph.n_h(), n);
    for i in 0..graph.num_agents() {
        let z = graph.gather_z(i, x);
        let idx = graph.z_global_indices(i);
        let oracle = &graph.agent(i).oracle;
        let (gr, hr) = (graph.g_range(i), graph.h_range(i));
        if !gr.is_empty() {
            let local = oracle.equality_jacobian(&z);
            for (c, &k) in idx.iter().enumerate() {
                for r in 0..gr.len() {
                    jg[(gr.start + r, k)] += local[(r, c)];
                }
            }
        }
        if !hr.is_empty() {
            let local = oracle.inequality_jacobian(&z);
            for (c, &k) in idx.iter().enumerate() {
                for r in 0..hr.len() {
                    jh[(hr.start + r, k)] += local[(r, c)];
                }
            }
        }
    }
    (jg, jh)
}

/// `∇_x L(x, λ, μ)`.
pub fn central_gradient(graph: &ProblemGraph, point: &PrimalDualPoint) -> Vector {
    let mut grad = Vector::zeros(graph.n());
    for i in 0..graph.num_agents() {
        let s = point.agent_slice(graph, i);
        let z = graph.gather_z(i, &point.x);
        let local = local_lagrangian_gradient(graph.agent(i).oracle.as_ref(), &z, &s.lambda, &s.mu);
        for (c, k) in graph.z_global_indices(i).into_iter().enumerate() {
            grad[k] += local[c];
        }
    }
    grad
}

/// `∇²_xx L(x, λ, μ)`.
pub fn central_hessian(graph: &ProblemGraph, point: &PrimalDualPoint) -> Matrix {
    let n = graph.n();
    let mut hess = Matrix::zeros(n, n);
    for i in 0..graph.num_agents() {
        let s = point.agent_slice(graph, i);
        let z = graph.gather_z(i, &point.x);
        let local = local_lagrangian_hessian(graph.agent(i).oracle.as_ref(), &z, &s.lambda, &s.mu);
        let idx = graph.z_global_indices(i);
        for (a, &ka) in idx.iter().enumerate() {
            for (b, &kb) in idx.iter().enumerate() {
                hess[(ka, kb)] += local[(a, b)];
            }
        }
    }
    hess
}

/// Max-norm KKT residual of the central NLP: stationarity, equality
/// feasibility, inequality violation, dual sign violation and complementarity.
pub fn central_kkt_residual(graph: &ProblemGraph, point: &PrimalDualPoint) -> f64 {
    let h = central_inequalities(graph, &point.x);
    let stationarity = inf_norm(&central_gradient(graph, point));
    let feas_g = inf_norm(&central_equalities(graph, &point.x));
    let feas_h = h.iter().fold(0.0_f64, |a, v| a.max(v.max(0.0)));
    let sign = point.mu.iter().fold(0.0_f64, |a, v| a.max((-v).max(0.0)));
    let compl = inf_norm(&point.mu.component_mul(&h));
    stationarity.max(feas_g).max(feas_h).max(sign).max(compl)
}

/// One row of a derivative audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub agent: usize,
    pub oracle: &'static str,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn max_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.entries.iter().all(|e| e.max_rel_error <= tol)
    }
}

fn rel_error(a: &Matrix, b: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    max_abs(&(a - b)) / max_abs(b).max(1.0)
}

fn central_diff_with(h: f64, z: &[f64], rows: usize, f: impl Fn(&[f64]) -> Vector) -> Matrix {
    let mut jac = Matrix::zeros(rows, z.len());
    let mut zz = z.to_vec();
    for k in 0..z.len() {
        zz[k] = z[k] + h;
        let fp = f(&zz);
        zz[k] = z[k] - h;
        let fm = f(&zz);
        zz[k] = z[k];
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Compares every oracle derivative against central differences of the
/// next-lower-order oracle with step `h`. Constraint Hessians are contracted
/// with the point's multipliers.
pub fn finite_difference_audit(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    h: f64,
) -> AuditReport {
    let mut entries = Vec::new();
    for i in 0..graph.num_agents() {
        let oracle = graph.agent(i).oracle.as_ref();
        let z = graph.gather_z(i, &point.x);
        let nz = z.len();
        let s = point.agent_slice(graph, i);
        let mut push = |name: &'static str, a: Matrix, b: Matrix| {
            entries.push(AuditEntry {
                agent: i,
                oracle: name,
                max_rel_error: rel_error(&a, &b),
            });
        };

        let grad = oracle.objective_gradient(&z);
        let fd = central_diff_with(h, &z, 1, |v| Vector::from_element(1, oracle.objective(v)));
        push(
            "objective_gradient",
            Matrix::from_row_slice(1, nz, grad.as_slice()),
            fd,
        );

        let fd = central_diff_with(h, &z, nz, |v| oracle.objective_gradient(v));
        push("objective_hessian", oracle.objective_hessian(&z), fd);

        let own = graph.agent(i).dim;
        let full = oracle.objective_hessian(&z);
        push(
            "objective_hessian_own",
            oracle.objective_hessian_own(&z, own),
            full.view((0, 0), (own, own)).into_owned(),
        );

        let ng = graph.agent(i).n_eq;
        if ng > 0 {
            let fd = central_diff_with(h, &z, ng, |v| oracle.equalities(v));
            push("equality_jacobian", oracle.equality_jacobian(&z), fd);
            let w = weights_or_ones(&s.lambda);
            let fd = central_diff_with(h, &z, nz, |v| oracle.equality_jacobian(v).tr_mul(&w));
            push(
                "equality_hessian",
                oracle.equality_hessian(&z, w.as_slice()),
                fd,
            );
        }
        let nh = graph.agent(i).n_ineq;
        if nh > 0 {
            let fd = central_diff_with(h, &z, nh, |v| oracle.inequalities(v));
            push("inequality_jacobian", oracle.inequality_jacobian(&z), fd);
            let w = weights_or_ones(&s.mu);
            let fd = central_diff_with(h, &z, nz, |v| oracle.inequality_jacobian(v).tr_mul(&w));
            push(
                "inequality_hessian",
                oracle.inequality_hessian(&z, w.as_slice()),
                fd,
            );
        }
    }
    AuditReport { entries }
}

// All-zero multipliers would hide errors in constraint curvature.
fn weights_or_ones(w: &Vector) -> Vector {
    if w.iter().all(|v| *v == 0.0) {
        Vector::from_element(w.len(), 1.0)
    } else {
        w.clone()
    }
}

/// Global indices of the inequalities that are active at `x` (`|h_k| <= tau`).
pub fn active_inequalities(graph: &ProblemGraph, x: &Vector, tau: f64) -> BTreeSet<usize> {
    central_inequalities(graph, x)
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() <= tau)
        .map(|(k, _)| k)
        .collect()
}
