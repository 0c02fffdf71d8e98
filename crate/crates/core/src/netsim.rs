//! Deterministic synchronous neighbor-to-neighbor message passing.
//!
//! Every inter-agent datum in the engine travels through [`NetworkSim::exchange`].
//! Floats are tallied per message kind; convergence flags are tallied as bits
//! in their own rounds and never counted as floats or communication steps.

use std::io::{self, Write};

use thiserror::Error;

use crate::linalg::Vector;
use crate::model::ProblemGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    /// Mirrored gradient `∇_{x_to} L_from`.
    Sensitivity,
    /// `x_from`, optionally followed by `λ_from, μ_from`.
    Decision,
    /// `S_{to,from} s_from`.
    Correction,
    /// One-bit convergence flag.
    Flag,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Sensitivity => "SENSITIVITY",
            MessageKind::Decision => "DECISION",
            MessageKind::Correction => "CORRECTION",
            MessageKind::Flag => "FLAG",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub kind: MessageKind,
    pub payload: Vector,
    pub flag: bool,
}

impl Message {
    pub fn data(from: usize, to: usize, kind: MessageKind, payload: Vector) -> Self {
        Self {
            from,
            to,
            kind,
            payload,
            flag: false,
        }
    }

    pub fn flag(from: usize, to: usize, flag: bool) -> Self {
        Self {
            from,
            to,
            kind: MessageKind::Flag,
            payload: Vector::zeros(0),
            flag,
        }
    }

    pub fn float_count(&self) -> usize {
        match self.kind {
            MessageKind::Flag => 0,
            _ => self.payload.len(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("message {from} -> {to} does not follow a graph edge")]
    NotAnEdge { from: usize, to: usize },
    #[error("mixed message kinds in one round")]
    MixedRound,
}

/// Communication tally of one iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IterComm {
    /// Floats by kind: sensitivity, decision, correction.
    pub floats: [usize; 3],
    pub steps: usize,
    pub flag_bits: usize,
    pub flag_rounds: usize,
    /// Floats received; equal to floats sent in a lossless round.
    pub floats_received: usize,
}

impl IterComm {
    pub fn total_floats(&self) -> usize {
        self.floats.iter().sum()
    }

    pub fn floats_of(&self, kind: MessageKind) -> usize {
        match kind {
            MessageKind::Flag => 0,
            k => self.floats[k.index()],
        }
    }
}

/// Per-iteration tallies. Entry 0 holds the initialization round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    pub iterations: Vec<IterComm>,
}

impl CommLedger {
    pub fn total_floats(&self) -> usize {
        self.iterations.iter().map(IterComm::total_floats).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub iter: usize,
    pub step: usize,
    pub from: usize,
    pub to: usize,
    pub kind: MessageKind,
    pub float_count: usize,
}

/// Messages delivered in one round, indexed by recipient and sorted by sender.
pub type Delivery = Vec<Vec<Message>>;

#[derive(Debug, Clone)]
pub struct NetworkSim {
    adjacency: Vec<Vec<usize>>,
    ledger: CommLedger,
    log: Vec<LogEntry>,
    keep_log: bool,
}

impl NetworkSim {
    pub fn new(graph: &ProblemGraph) -> Self {
        Self {
            adjacency: (0..graph.num_agents())
                .map(|i| graph.neighbors(i).to_vec())
                .collect(),
            ledger: CommLedger {
                iterations: vec![IterComm::default()],
            },
            log: Vec::new(),
            keep_log: false,
        }
    }

    pub fn with_log(mut self, keep: bool) -> Self {
        self.keep_log = keep;
        self
    }

    /// Opens the tally of the next iteration.
    pub fn begin_iteration(&mut self) {
        self.ledger.iterations.push(IterComm::default());
    }

    pub fn current_iteration(&self) -> usize {
        self.ledger.iterations.len() - 1
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Delivers one synchronous round. Data rounds count as one communication
    /// step; flag rounds are tallied separately. An empty round costs nothing.
    pub fn exchange(&mut self, messages: Vec<Message>) -> Result<Delivery, NetError> {
        let mut delivery: Delivery = vec![Vec::new(); self.adjacency.len()];
        if messages.is_empty() {
            return Ok(delivery);
        }
        let kind = messages[0].kind;
        let is_flag = kind == MessageKind::Flag;
        for m in &messages {
            if (m.kind == MessageKind::Flag) != is_flag {
                return Err(NetError::MixedRound);
            }
            let ok = m.from < self.adjacency.len()
                && self.adjacency[m.from].binary_search(&m.to).is_ok();
            if !ok {
                return Err(NetError::NotAnEdge {
                    from: m.from,
                    to: m.to,
                });
            }
        }
        let iter = self.current_iteration();
        let tally = self.ledger.iterations.last_mut().unwrap();
        if is_flag {
            tally.flag_rounds += 1;
        } else {
            tally.steps += 1;
        }
        let step = if is_flag {
            tally.flag_rounds
        } else {
            tally.steps
        };
        for m in messages {
            if is_flag {
                tally.flag_bits += 1;
            } else {
                tally.floats[m.kind.index()] += m.float_count();
            }
            if self.keep_log {
                self.log.push(LogEntry {
                    iter,
                    step,
                    from: m.from,
                    to: m.to,
                    kind: m.kind,
                    float_count: m.float_count(),
                });
            }
            delivery[m.to].push(m);
        }
        for inbox in &mut delivery {
            inbox.sort_by_key(|m| m.from);
            tally.floats_received += inbox.iter().map(Message::float_count).sum::<usize>();
        }
        Ok(delivery)
    }

    /// Tab-separated dump: `iter step from to kind float_count`.
    pub fn write_log(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "iter\tstep\tfrom\tto\tkind\tfloat_count")?;
        for e in &self.log {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.iter,
                e.step,
                e.from,
                e.to,
                e.kind.as_str(),
                e.float_count
            )?;
        }
        Ok(())
    }
}

/// Communication pattern of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommMode {
    /// Sensitivity and decision exchanges.
    TwoStep,
    /// Two-step pattern plus the correction exchange.
    WithCorrections,
    /// Decisions carry multipliers; sensitivities are evaluated locally.
    NeighborAffine,
    /// Neighbor-affine pattern plus the correction exchange.
    NeighborAffineWithCorrections,
}

/// Closed-form `(floats, steps)` per iteration.
pub fn expected_budget(graph: &ProblemGraph, mode: CommMode) -> (usize, usize) {
    let deg = |i: usize| graph.neighbors(i).len();
    let m = graph.num_agents();
    let base: usize = (0..m).map(|i| graph.agent(i).dim * deg(i)).sum();
    let affine: usize = (0..m)
        .map(|i| {
            let a = graph.agent(i);
            (a.dim + a.n_eq + a.n_ineq) * deg(i)
        })
        .sum();
    match mode {
        CommMode::TwoStep => (2 * base, 2),
        CommMode::WithCorrections => (3 * base, 3),
        CommMode::NeighborAffine => (affine, 1),
        CommMode::NeighborAffineWithCorrections => (affine + base, 2),
    }
}

/// True iff the iteration's floats and step count match the closed form.
pub fn verify_budget(tally: &IterComm, graph: &ProblemGraph, mode: CommMode) -> bool {
    let (floats, steps) = expected_budget(graph, mode);
    tally.total_floats() == floats && tally.steps == steps && tally.floats_received == floats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentOracle, AgentSpec};
    use std::sync::Arc;

    struct Zero;
    impl AgentOracle for Zero {
        fn objective(&self, _z: &[f64]) -> f64 {
            0.0
        }
    }

    fn path3() -> ProblemGraph {
        ProblemGraph::new(vec![
            AgentSpec::new(2, vec![1], Arc::new(Zero)),
            AgentSpec::new(1, vec![0, 2], Arc::new(Zero)),
            AgentSpec::new(1, vec![1], Arc::new(Zero)),
        ])
        .unwrap()
    }

    #[test]
    fn empty_round_is_free() {
        let mut net = NetworkSim::new(&path3());
        let d = net.exchange(Vec::new()).unwrap();
        assert!(d.iter().all(Vec::is_empty));
        assert_eq!(net.ledger().iterations[0], IterComm::default());
    }

    #[test]
    fn rejects_non_edges() {
        let mut net = NetworkSim::new(&path3());
        let err = net
            .exchange(vec![Message::data(
                0,
                2,
                MessageKind::Decision,
                Vector::zeros(2),
            )])
            .unwrap_err();
        assert_eq!(err, NetError::NotAnEdge { from: 0, to: 2 });
    }

    #[test]
    fn delivery_and_accounting() {
        let g = path3();
        let mut net = NetworkSim::new(&g).with_log(true);
        net.begin_iteration();
        let d = net
            .exchange(vec![
                Message::data(1, 0, MessageKind::Sensitivity, Vector::zeros(2)),
                Message::data(2, 1, MessageKind::Sensitivity, Vector::zeros(1)),
                Message::data(0, 1, MessageKind::Sensitivity, Vector::zeros(1)),
            ])
            .unwrap();
        assert_eq!(d[1].iter().map(|m| m.from).collect::<Vec<_>>(), vec![0, 2]);
        net.exchange(vec![Message::flag(0, 1, true)]).unwrap();
        let t = &net.ledger().iterations[1];
        assert_eq!(t.floats_of(MessageKind::Sensitivity), 4);
        assert_eq!(t.floats_received, 4);
        assert_eq!((t.steps, t.flag_rounds, t.flag_bits), (1, 1, 1));
        let mut buf = Vec::new();
        net.write_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("1\t1\t1\t0\tSENSITIVITY\t2"));
    }

    #[test]
    fn closed_form_budgets() {
        let g = path3();
        // Σ n_i |N_i| = 2 + 2 + 1.
        assert_eq!(expected_budget(&g, CommMode::TwoStep), (10, 2));
        assert_eq!(expected_budget(&g, CommMode::WithCorrections), (15, 3));
        assert_eq!(expected_budget(&g, CommMode::NeighborAffine), (5, 1));
    }
}
