//! Feature-split regularized logistic regression.
//!
//! `min (1/m) Σ_k log(1 + exp(-b_k a_kᵀ x)) + (ε/2)‖x‖²` subject to a box,
//! with `x` split into `M` equal blocks. Every agent carries a `1/M` share of
//! the loss, its own regularizer and its own box rows, so the coupling graph is
//! complete while every constraint is decoupled.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sbdp_core::model::{AgentOracle, AgentSpec, ModelError, ProblemGraph};
use sbdp_core::{Matrix, Vector};
use thiserror::Error;

/// Stream ids for [`ChaCha8Rng::set_stream`], one per generated array.
pub const STREAM_FEATURES: u64 = 0;
pub const STREAM_TRUTH: u64 = 1;
pub const STREAM_NOISE: u64 = 2;

#[derive(Debug, Error)]
pub enum LogregError {
    #[error("{agents} agents do not divide {features} features")]
    Split { agents: usize, features: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogregParams {
    pub samples: usize,
    pub features: usize,
    pub agents: usize,
    pub seed: u64,
    pub eps_reg: f64,
    pub box_bound: f64,
    /// Standard deviation of the feature entries.
    pub feature_std: f64,
    /// Variance of the label noise.
    pub noise_var: f64,
}

impl Default for LogregParams {
    fn default() -> Self {
        Self {
            samples: 200,
            features: 100,
            agents: 10,
            seed: 1,
            eps_reg: 0.1,
            box_bound: 0.25,
            feature_std: 1.0,
            noise_var: 0.1,
        }
    }
}

/// Generated data; `signed` holds the rows `b_k a_kᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogregData {
    pub params: LogregParams,
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub x_true: DVector<f64>,
    pub signed: DMatrix<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let dist = Normal::new(0.0, std).expect("finite positive std");
    // Row-major draw order so that a row only depends on its index.
    DMatrix::from_row_iterator(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)))
}

pub fn generate(params: &LogregParams) -> Result<LogregData, LogregError> {
    let LogregParams {
        samples: m,
        features: n,
        agents,
        ..
    } = *params;
    if agents == 0 || n == 0 || n % agents != 0 {
        return Err(LogregError::Split {
            agents,
            features: n,
        });
    }
    if m == 0 {
        return Err(LogregError::Parameter("samples must be positive".into()));
    }
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !positive(params.feature_std) || !positive(params.box_bound) {
        return Err(LogregError::Parameter(
            "feature_std and box must be positive".into(),
        ));
    }
    if !(params.eps_reg.is_finite()
        && params.eps_reg >= 0.0
        && params.noise_var.is_finite()
        && params.noise_var >= 0.0)
    {
        return Err(LogregError::Parameter(
            "eps_reg and noise_var must be nonnegative".into(),
        ));
    }
    let features = normal_matrix(
        m,
        n,
        params.feature_std,
        &mut stream(params.seed, STREAM_FEATURES),
    );
    let x_true = normal_matrix(n, 1, 1.0, &mut stream(params.seed, STREAM_TRUTH))
        .column(0)
        .into_owned();
    let noise = if params.noise_var > 0.0 {
        normal_matrix(
            m,
            1,
            params.noise_var.sqrt(),
            &mut stream(params.seed, STREAM_NOISE),
        )
        .column(0)
        .into_owned()
    } else {
        DVector::zeros(m)
    };
    let margin = &features * &x_true + noise;
    let labels = margin.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
    let mut signed = features.clone();
    for k in 0..m {
        signed.row_mut(k).scale_mut(labels[k]);
    }
    Ok(LogregData {
        params: *params,
        features,
        labels,
        x_true,
        signed,
    })
}

/// `log(1 + exp(-w))` without overflow.
pub fn softplus_neg(w: f64) -> f64 {
    if w > 0.0 {
        (-w).exp().ln_1p()
    } else {
        -w + w.exp().ln_1p()
    }
}

/// `1 / (1 + exp(w))`.
fn sigmoid_neg(w: f64) -> f64 {
    if w > 0.0 {
        let e = (-w).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + w.exp())
    }
}

/// Full loss `(1/m) Σ log(1 + exp(-b_k a_kᵀ x)) + (ε/2)‖x‖²`.
pub fn central_cost(data: &LogregData, x: &DVector<f64>) -> f64 {
    let m = data.signed.nrows() as f64;
    let w = &data.signed * x;
    w.iter().map(|&v| softplus_neg(v)).sum::<f64>() / m
        + 0.5 * data.params.eps_reg * x.norm_squared()
}

struct Share {
    /// `signed` with columns permuted into the agent's `z` order.
    rows: Matrix,
    own: usize,
    weight: f64,
    eps_reg: f64,
    bound: f64,
}

impl Share {
    fn margins(&self, z: &[f64]) -> Vector {
        &self.rows * Vector::from_column_slice(z)
    }
}

impl AgentOracle for Share {
    fn objective(&self, z: &[f64]) -> f64 {
        let w = self.margins(z);
        let own: f64 = z[..self.own].iter().map(|v| v * v).sum();
        self.weight * w.iter().map(|&v| softplus_neg(v)).sum::<f64>() + 0.5 * self.eps_reg * own
    }

    fn inequalities(&self, z: &[f64]) -> Vector {
        let n = self.own;
        Vector::from_fn(2 * n, |k, _| {
            if k < n {
                z[k] - self.bound
            } else {
                -z[k - n] - self.bound
            }
        })
    }

    fn objective_gradient(&self, z: &[f64]) -> Vector {
        let w = self.margins(z);
        let coef = w.map(|v| -self.weight * sigmoid_neg(v));
        let mut g = self.rows.tr_mul(&coef);
        for k in 0..self.own {
            g[k] += self.eps_reg * z[k];
        }
        g
    }

    fn objective_hessian(&self, z: &[f64]) -> Matrix {
        let w = self.margins(z);
        let mut scaled = self.rows.clone();
        for (k, v) in w.iter().enumerate() {
            let s = sigmoid_neg(*v);
            scaled.row_mut(k).scale_mut(self.weight * s * (1.0 - s));
        }
        let mut h = self.rows.tr_mul(&scaled);
        for k in 0..self.own {
            h[(k, k)] += self.eps_reg;
        }
        h
    }

    fn objective_hessian_own(&self, z: &[f64], n_own: usize) -> Matrix {
        let w = self.margins(z);
        let block = self.rows.columns(0, n_own);
        let mut scaled = block.clone_owned();
        for (k, v) in w.iter().enumerate() {
            let s = sigmoid_neg(*v);
            scaled.row_mut(k).scale_mut(self.weight * s * (1.0 - s));
        }
        let mut h = block.tr_mul(&scaled);
        for k in 0..n_own.min(self.own) {
            h[(k, k)] += self.eps_reg;
        }
        h
    }

    fn inequality_jacobian(&self, z: &[f64]) -> Matrix {
        let n = self.own;
        let mut j = Matrix::zeros(2 * n, z.len());
        for k in 0..n {
            j[(k, k)] = 1.0;
            j[(n + k, k)] = -1.0;
        }
        j
    }

    fn inequality_hessian(&self, z: &[f64], _w: &[f64]) -> Matrix {
        Matrix::zeros(z.len(), z.len())
    }
}

/// Complete-graph problem with one loss share per agent.
pub fn build_graph(data: &LogregData) -> Result<ProblemGraph, LogregError> {
    let p = &data.params;
    let block = p.features / p.agents;
    let m = data.signed.nrows();
    let mut specs = Vec::with_capacity(p.agents);
    for i in 0..p.agents {
        let neighbors: Vec<usize> = (0..p.agents).filter(|&j| j != i).collect();
        let order: Vec<usize> = std::iter::once(i)
            .chain(neighbors.iter().copied())
            .flat_map(|a| a * block..(a + 1) * block)
            .collect();
        let rows = Matrix::from_fn(m, p.features, |r, c| data.signed[(r, order[c])]);
        let share = Share {
            rows,
            own: block,
            weight: 1.0 / (p.agents as f64 * m as f64),
            eps_reg: p.eps_reg,
            bound: p.box_bound,
        };
        specs.push(
            AgentSpec::new(block, neighbors, Arc::new(share))
                .with_inequalities(2 * block, 2 * block),
        );
    }
    Ok(ProblemGraph::new(specs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sbdp_core::model::{central_objective, finite_difference_audit, PrimalDualPoint};

    fn small() -> LogregParams {
        LogregParams {
            samples: 12,
            features: 6,
            agents: 3,
            seed: 7,
            ..LogregParams::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&LogregParams { seed: 8, ..small() }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn streams_are_independent_of_sizes() {
        let a = generate(&small()).unwrap();
        let b = generate(&LogregParams {
            samples: 20,
            ..small()
        })
        .unwrap();
        assert_eq!(a.x_true, b.x_true);
        assert_eq!(a.features.rows(0, 12), b.features.rows(0, 12));
    }

    #[test]
    fn rejects_uneven_split() {
        let p = LogregParams {
            features: 7,
            ..small()
        };
        assert!(matches!(generate(&p), Err(LogregError::Split { .. })));
    }

    #[test]
    fn shares_sum_to_central_cost() {
        let data = generate(&small()).unwrap();
        let g = build_graph(&data).unwrap();
        assert!(g.all_constraints_decoupled());
        let x = DVector::from_fn(6, |k, _| 0.1 * k as f64 - 0.2);
        let total = central_objective(&g, &x);
        assert!((total - central_cost(&data, &x)).abs() <= 1e-13);
    }

    #[test]
    fn derivatives_pass_audit() {
        let data = generate(&small()).unwrap();
        let g = build_graph(&data).unwrap();
        let mut p = PrimalDualPoint::zeros(&g);
        for k in 0..6 {
            p.x[k] = 0.05 * k as f64 - 0.1;
        }
        p.mu.fill(0.3);
        let report = finite_difference_audit(&g, &p, 1e-6);
        assert!(report.passes(1e-6), "{}", report.max_error());
        let z = g.gather_z(1, &p.x);
        let o = g.agent(1).oracle.as_ref();
        let full = o.objective_hessian(&z);
        let own = o.objective_hessian_own(&z, 2);
        assert!((full.view((0, 0), (2, 2)) - own).amax() <= 1e-15);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus_neg(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(softplus_neg(800.0) >= 0.0 && softplus_neg(800.0) < 1e-300);
        assert!((softplus_neg(-800.0) - 800.0).abs() < 1e-12);
    }
}
