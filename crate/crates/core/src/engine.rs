//! Synchronous distributed iteration.
//!
//! One iteration per agent `i`:
//! 1. evaluate the mirrored sensitivities `∇_{x_j} L_i` and send them to each neighbor `j`;
//! 2. solve the local subproblem for `y_i = (s_i, ν_i, κ_i)`;
//! 3. (full SOSC variant) send `S_ji s_i` to each neighbor;
//! 4. update `p_i`;
//! 5. send `x_i` to each neighbor;
//! 6. agree on `max_i ‖s_i‖∞ <= ε` by min-consensus over one-bit flags.
//!
//! In neighbor-affine mode step 1 is evaluated locally from neighbor data and
//! step 5 also carries `λ_i, μ_i`.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{inf_norm, Matrix, Vector};
use crate::local_nlp::{solve_local_nlp, LocalError, LocalNlp, LocalSolution};
use crate::model::{
    local_lagrangian_gradient, AgentSlice, ModelError, PrimalDualPoint, ProblemGraph,
};
use crate::netsim::{CommLedger, CommMode, IterComm, Message, MessageKind, NetError, NetworkSim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Mixing-matrix primal-dual update.
    Plus,
    /// Mixing matrix replaced by the identity; requires decoupled constraints.
    Identity,
    /// Mixing update plus the neighbor correction `γ Σ S_ij s_j`.
    Sosc,
    /// Mixing update plus the local correction over decoupled constraints.
    PartialSosc,
    /// Plain damped sensitivity-based iteration without decoupling requirement.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Plus,
        Variant::Identity,
        Variant::Sosc,
        Variant::PartialSosc,
        Variant::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plus => "plus",
            Variant::Identity => "identity",
            Variant::Sosc => "sosc",
            Variant::PartialSosc => "partial_sosc",
            Variant::Baseline => "baseline",
        }
    }

    pub fn uses_mixing(self) -> bool {
        matches!(self, Variant::Plus | Variant::Sosc | Variant::PartialSosc)
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant '{s}'"))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub variant: Variant,
    pub local_tol: f64,
    /// Record wall-clock time per iteration; off keeps traces reproducible.
    pub timing: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            rho: 0.0,
            gamma: 0.0,
            epsilon: 1e-8,
            max_iter: 1000,
            variant: Variant::Plus,
            local_tol: 1e-10,
            timing: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive and finite");
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho must be nonnegative and finite");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be nonnegative and finite");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if !(self.local_tol > 0.0 && self.local_tol.is_finite()) {
            return bad("local_tol must be positive and finite");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("iteration {iter}: {source}")]
    Local { iter: usize, source: LocalError },
    #[error(transparent)]
    Network(#[from] NetError),
    #[error("agent {agent}: missing correction from {from}")]
    MissingCorrection { agent: usize, from: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Point after this iteration's update.
    pub point: PrimalDualPoint,
    pub local: Vec<LocalSolution>,
    pub s_inf: f64,
    pub comm: IterComm,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub initial: PrimalDualPoint,
    pub records: Vec<IterationRecord>,
    pub status: TraceStatus,
    pub mode: CommMode,
    pub ledger: CommLedger,
}

impl IterationTrace {
    pub fn final_point(&self) -> &PrimalDualPoint {
        self.records.last().map_or(&self.initial, |r| &r.point)
    }

    /// Points `p^0, p^1, ...`.
    pub fn points(&self) -> impl Iterator<Item = &PrimalDualPoint> {
        std::iter::once(&self.initial).chain(self.records.iter().map(|r| &r.point))
    }
}

pub fn comm_mode(graph: &ProblemGraph, variant: Variant) -> CommMode {
    match (graph.neighbor_affine(), variant == Variant::Sosc) {
        (false, false) => CommMode::TwoStep,
        (false, true) => CommMode::WithCorrections,
        (true, false) => CommMode::NeighborAffine,
        (true, true) => CommMode::NeighborAffineWithCorrections,
    }
}

/// `P_i = [∇²L̄, J̄gᵀ, J̄hᵀ; -βJ̄g, 0, 0; -βK J̄h, 0, -βH̄]` at `y`.
pub fn mixing_matrix(nlp: &LocalNlp, y: &LocalSolution, beta: f64) -> Matrix {
    use crate::ipm::SmoothNlp;
    let (n, ng, nh) = (nlp.dim, nlp.n_eq, nlp.n_ineq);
    let mut p = Matrix::zeros(n + ng + nh, n + ng + nh);
    p.view_mut((0, 0), (n, n))
        .copy_from(&nlp.hessian(&y.s, &y.nu, &y.kappa));
    let jg = nlp.eq_jacobian(&y.s);
    let jh = nlp.ineq_jacobian(&y.s);
    let h = nlp.inequalities(&y.s);
    p.view_mut((0, n), (n, ng)).copy_from(&jg.transpose());
    p.view_mut((0, n + ng), (n, nh)).copy_from(&jh.transpose());
    p.view_mut((n, 0), (ng, n)).copy_from(&(&jg * -beta));
    for k in 0..nh {
        for c in 0..n {
            p[(n + ng + k, c)] = -beta * y.kappa[k] * jh[(k, c)];
        }
        p[(n + ng + k, n + ng + k)] = -beta * h[k];
    }
    p
}

/// Correction block `S_ij` (`n_i x n_j`) built from the constraints of agent
/// `j` at its local solution. With `decoupled_only`, only `j`'s leading
/// decoupled rows contribute (used for `i == j` in the partial variant).
pub fn correction_matrix(
    graph: &ProblemGraph,
    i: usize,
    nlp_j: &LocalNlp,
    y_j: &LocalSolution,
    decoupled_only: bool,
) -> Result<Matrix, EngineError> {
    let j = nlp_j.agent;
    let off_i = if i == j {
        0
    } else {
        graph
            .z_offset(j, i)
            .ok_or(ModelError::NotNeighbor { agent: i, of: j })?
    };
    let (ni, nj) = (graph.agent(i).dim, graph.agent(j).dim);
    let spec = graph.agent(j);
    let (rows_g, rows_h) = if decoupled_only {
        (spec.decoupled_eq, spec.decoupled_ineq)
    } else {
        (spec.n_eq, spec.n_ineq)
    };
    let jg = nlp_j.full_eq_jacobian(&y_j.s);
    let jh = nlp_j.full_ineq_jacobian(&y_j.s);
    let mut s = Matrix::zeros(ni, nj);
    if rows_g > 0 {
        let a = jg.view((0, off_i), (rows_g, ni));
        let b = jg.view((0, 0), (rows_g, nj));
        s += a.transpose() * b;
    }
    if rows_h > 0 {
        let a = jh.view((0, off_i), (rows_h, ni));
        let mut b = jh.view((0, 0), (rows_h, nj)).into_owned();
        for k in 0..rows_h {
            let w = y_j.kappa[k] * y_j.kappa[k];
            b.row_mut(k).scale_mut(w);
        }
        s += a.transpose() * b;
    }
    Ok(s)
}

fn increment(slice: &AgentSlice, y: &LocalSolution) -> Vector {
    AgentSlice {
        x: y.s.clone(),
        lambda: &y.nu - &slice.lambda,
        mu: &y.kappa - &slice.mu,
    }
    .stacked()
}

fn apply(slice: &AgentSlice, step: &Vector) -> AgentSlice {
    let next = slice.stacked() + step;
    AgentSlice::from_stacked(&next, slice.x.len(), slice.lambda.len(), slice.mu.len())
}

/// `p_i + α P_i (y_i - d_i)` with `d_i = (0, λ_i, μ_i)`.
pub fn update_plus(
    slice: &AgentSlice,
    y: &LocalSolution,
    p_mix: &Matrix,
    alpha: f64,
) -> AgentSlice {
    apply(slice, &(p_mix * increment(slice, y) * alpha))
}

/// `p_i + α (y_i - d_i)`.
pub fn update_identity(slice: &AgentSlice, y: &LocalSolution, alpha: f64) -> AgentSlice {
    apply(slice, &(increment(slice, y) * alpha))
}

/// `p_i + α [P_i (y_i - d_i) + γ Σ_j (S_ij s_j; 0; 0)]`. The corrections must
/// be keyed by every `j ∈ N_i ∪ {i}`, or by `i` alone when `partial`.
#[allow(clippy::too_many_arguments)]
pub fn update_plus_sosc(
    graph: &ProblemGraph,
    i: usize,
    slice: &AgentSlice,
    y: &LocalSolution,
    p_mix: &Matrix,
    corrections: &BTreeMap<usize, Vector>,
    alpha: f64,
    gamma: f64,
    partial: bool,
) -> Result<AgentSlice, EngineError> {
    let mut step = p_mix * increment(slice, y);
    let mut required = vec![i];
    if !partial {
        required.extend_from_slice(graph.neighbors(i));
    }
    let n = slice.x.len();
    for j in required {
        let c = corrections
            .get(&j)
            .ok_or(EngineError::MissingCorrection { agent: i, from: j })?;
        let mut head = step.rows_mut(0, n);
        head += c * gamma;
    }
    Ok(apply(slice, &(step * alpha)))
}

/// True iff every agent's `‖s_i‖∞ <= ε`.
pub fn stopping(all_s: &[Vector], epsilon: f64) -> bool {
    all_s.iter().all(|s| inf_norm(s) <= epsilon)
}

struct AgentState {
    id: usize,
    slice: AgentSlice,
    known_x: BTreeMap<usize, Vector>,
    known_dual: BTreeMap<usize, (Vector, Vector)>,
    warm: Option<LocalSolution>,
}

impl AgentState {
    fn z(&self, graph: &ProblemGraph) -> Vec<f64> {
        let mut z = self.slice.x.as_slice().to_vec();
        for j in graph.neighbors(self.id) {
            z.extend_from_slice(self.known_x[j].as_slice());
        }
        z
    }

    /// Agent `j`'s local vector as seen by this agent; unknown blocks are zero.
    fn neighbor_z(&self, graph: &ProblemGraph, j: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(graph.z_dim(j));
        for (k, _) in graph.z_layout(j) {
            if k == self.id {
                z.extend_from_slice(self.slice.x.as_slice());
            } else if let Some(v) = self.known_x.get(&k) {
                z.extend_from_slice(v.as_slice());
            } else {
                z.extend(std::iter::repeat_n(0.0, graph.agent(k).dim));
            }
        }
        z
    }

    fn decision_payload(&self, affine: bool) -> Vector {
        if affine {
            self.slice.stacked()
        } else {
            self.slice.x.clone()
        }
    }

    fn receive_decision(&mut self, graph: &ProblemGraph, m: &Message, affine: bool) {
        let a = graph.agent(m.from);
        if affine {
            let s = AgentSlice::from_stacked(&m.payload, a.dim, a.n_eq, a.n_ineq);
            self.known_x.insert(m.from, s.x);
            self.known_dual.insert(m.from, (s.lambda, s.mu));
        } else {
            self.known_x.insert(m.from, m.payload.clone());
        }
    }
}

fn decision_round(
    graph: &ProblemGraph,
    states: &mut [AgentState],
    net: &mut NetworkSim,
    affine: bool,
) -> Result<(), EngineError> {
    let msgs = states
        .iter()
        .flat_map(|st| {
            let payload = st.decision_payload(affine);
            graph
                .neighbors(st.id)
                .iter()
                .map(move |&j| Message::data(st.id, j, MessageKind::Decision, payload.clone()))
        })
        .collect();
    let delivery = net.exchange(msgs)?;
    for (st, inbox) in states.iter_mut().zip(delivery) {
        for m in &inbox {
            st.receive_decision(graph, m, affine);
        }
    }
    Ok(())
}

// Min-consensus on the local flags; after `diameter` rounds all agents agree.
fn flag_consensus(
    graph: &ProblemGraph,
    flags: &mut [bool],
    net: &mut NetworkSim,
) -> Result<bool, EngineError> {
    let rounds = graph.diameter().unwrap_or(0);
    for _ in 0..rounds {
        let msgs = (0..flags.len())
            .flat_map(|i| graph.neighbors(i).iter().map(move |&j| (i, j)))
            .map(|(i, j)| Message::flag(i, j, flags[i]))
            .collect();
        let delivery = net.exchange(msgs)?;
        for (i, inbox) in delivery.iter().enumerate() {
            flags[i] = flags[i] && inbox.iter().all(|m| m.flag);
        }
    }
    Ok(flags.iter().all(|&f| f))
}

const DIVERGENCE_BOUND: f64 = 1e8;

/// Runs the iteration from `p0` until the distributed stopping test, the
/// iteration limit, or divergence (`‖p‖∞ > 1e8` or non-finite values).
pub fn run(
    graph: &ProblemGraph,
    config: &EngineConfig,
    p0: &PrimalDualPoint,
    net: &mut NetworkSim,
) -> Result<IterationTrace, EngineError> {
    config.validate()?;
    if p0.x.len() != graph.n() || p0.lambda.len() != graph.n_g() || p0.mu.len() != graph.n_h() {
        return Err(ModelError::Dimension {
            what: "initial point".into(),
            expected: graph.p_dim(),
            got: p0.dim(),
        }
        .into());
    }
    if config.variant == Variant::Identity && !graph.all_constraints_decoupled() {
        return Err(EngineError::Config(
            "identity variant requires decoupled constraints for every agent".into(),
        ));
    }
    let affine = graph.neighbor_affine();
    let mode = comm_mode(graph, config.variant);
    let m = graph.num_agents();

    let mut states: Vec<AgentState> = (0..m)
        .map(|i| AgentState {
            id: i,
            slice: p0.agent_slice(graph, i),
            known_x: BTreeMap::new(),
            known_dual: BTreeMap::new(),
            warm: None,
        })
        .collect();
    decision_round(graph, &mut states, net, affine)?;

    let mut records = Vec::new();
    let mut status = TraceStatus::MaxIterations;
    let mut warned_sign = false;
    for iter in 1..=config.max_iter {
        let t0 = Instant::now();
        net.begin_iteration();

        // Sensitivities.
        let sens: Vec<Vector> = if affine {
            states
                .par_iter()
                .map(|st| {
                    let mut c = Vector::zeros(st.slice.x.len());
                    for &j in graph.neighbors(st.id) {
                        let z = st.neighbor_z(graph, j);
                        let (lam, mu) = &st.known_dual[&j];
                        let grad =
                            local_lagrangian_gradient(graph.agent(j).oracle.as_ref(), &z, lam, mu);
                        let off = graph.z_offset(j, st.id).expect("symmetric graph");
                        c += grad.rows(off, st.slice.x.len());
                    }
                    c
                })
                .collect()
        } else {
            let outgoing: Vec<Vec<Message>> = states
                .par_iter()
                .map(|st| {
                    let z = st.z(graph);
                    let grad = local_lagrangian_gradient(
                        graph.agent(st.id).oracle.as_ref(),
                        &z,
                        &st.slice.lambda,
                        &st.slice.mu,
                    );
                    graph
                        .z_layout(st.id)
                        .into_iter()
                        .skip(1)
                        .map(|(j, off)| {
                            let payload = grad.rows(off, graph.agent(j).dim).into_owned();
                            Message::data(st.id, j, MessageKind::Sensitivity, payload)
                        })
                        .collect()
                })
                .collect();
            let delivery = net.exchange(outgoing.into_iter().flatten().collect())?;
            delivery
                .iter()
                .enumerate()
                .map(|(i, inbox)| {
                    inbox
                        .iter()
                        .fold(Vector::zeros(graph.agent(i).dim), |acc, msg| {
                            acc + &msg.payload
                        })
                })
                .collect()
        };

        // Local solves.
        let solved: Vec<Result<(LocalNlp, LocalSolution), LocalError>> = states
            .par_iter()
            .zip(sens.into_par_iter())
            .map(|(st, c)| {
                let nlp = LocalNlp::new(graph, st.id, st.z(graph), config.rho, c)?;
                let y = solve_local_nlp(&nlp, st.warm.as_ref(), config.local_tol)?;
                Ok((nlp, y))
            })
            .collect();
        let mut solved_ok = Vec::with_capacity(m);
        for r in solved {
            solved_ok.push(r.map_err(|source| EngineError::Local { iter, source })?);
        }

        // Corrections.
        let mut corrections: Vec<BTreeMap<usize, Vector>> = vec![BTreeMap::new(); m];
        match config.variant {
            Variant::Sosc => {
                let mut msgs = Vec::new();
                for (i, (nlp, y)) in solved_ok.iter().enumerate() {
                    let own = correction_matrix(graph, i, nlp, y, false)? * &y.s;
                    corrections[i].insert(i, own);
                    for &j in graph.neighbors(i) {
                        let payload = correction_matrix(graph, j, nlp, y, false)? * &y.s;
                        msgs.push(Message::data(i, j, MessageKind::Correction, payload));
                    }
                }
                let delivery = net.exchange(msgs)?;
                for (i, inbox) in delivery.into_iter().enumerate() {
                    for msg in inbox {
                        corrections[i].insert(msg.from, msg.payload);
                    }
                }
            }
            Variant::PartialSosc => {
                for (i, (nlp, y)) in solved_ok.iter().enumerate() {
                    corrections[i].insert(i, correction_matrix(graph, i, nlp, y, true)? * &y.s);
                }
            }
            _ => {}
        }

        // Updates.
        for (i, st) in states.iter_mut().enumerate() {
            let (nlp, y) = &solved_ok[i];
            st.slice = match config.variant {
                Variant::Identity | Variant::Baseline => {
                    update_identity(&st.slice, y, config.alpha)
                }
                Variant::Plus => update_plus(
                    &st.slice,
                    y,
                    &mixing_matrix(nlp, y, config.beta),
                    config.alpha,
                ),
                Variant::Sosc | Variant::PartialSosc => update_plus_sosc(
                    graph,
                    i,
                    &st.slice,
                    y,
                    &mixing_matrix(nlp, y, config.beta),
                    &corrections[i],
                    config.alpha,
                    config.gamma,
                    config.variant == Variant::PartialSosc,
                )?,
            };
            st.warm = Some(y.clone());
        }

        decision_round(graph, &mut states, net, affine)?;

        let all_s: Vec<Vector> = solved_ok.iter().map(|(_, y)| y.s.clone()).collect();
        let mut flags: Vec<bool> = all_s
            .iter()
            .map(|s| inf_norm(s) <= config.epsilon)
            .collect();
        let stop = flag_consensus(graph, &mut flags, net)?;

        let mut point = PrimalDualPoint::zeros(graph);
        for st in &states {
            point.set_agent_slice(graph, st.id, &st.slice);
        }
        let min_mu = point.mu.iter().copied().fold(f64::INFINITY, f64::min);
        if min_mu < -0.1 && !warned_sign {
            log::warn!("iteration {iter}: inequality multiplier {min_mu:.3e} is negative");
            warned_sign = true;
        }
        let p_inf = inf_norm(&point.stacked());
        records.push(IterationRecord {
            iter,
            point,
            local: solved_ok.into_iter().map(|(_, y)| y).collect(),
            s_inf: all_s.iter().map(inf_norm).fold(0.0, f64::max),
            comm: net.ledger().iterations.last().cloned().unwrap_or_default(),
            wall_ms: if config.timing {
                t0.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
        if !p_inf.is_finite() || p_inf > DIVERGENCE_BOUND {
            status = TraceStatus::Diverged;
            break;
        }
        if stop {
            status = TraceStatus::Converged;
            break;
        }
    }
    Ok(IterationTrace {
        initial: p0.clone(),
        records,
        status,
        mode,
        ledger: net.ledger().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        let ok = EngineConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            EngineConfig { alpha: 0.0, ..ok },
            EngineConfig { alpha: 1.5, ..ok },
            EngineConfig { beta: 0.0, ..ok },
            EngineConfig { rho: -1.0, ..ok },
            EngineConfig { gamma: -1.0, ..ok },
            EngineConfig { epsilon: 0.0, ..ok },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(EngineConfig {
            epsilon: f64::INFINITY,
            ..ok
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn stopping_threshold() {
        let eps = 1e-3;
        assert!(stopping(&[Vector::zeros(2), Vector::zeros(1)], eps));
        assert!(!stopping(&[Vector::from_vec(vec![0.0, eps * 1.01])], eps));
    }
}
