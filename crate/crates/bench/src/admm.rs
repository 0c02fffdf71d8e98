//! ADMM for the logistic regression problem split across features
//! (sharing form): per-block box-constrained least squares, a separable
//! central update of the averaged margins, and a scaled dual step.

use nalgebra::{DMatrix, DVector};
use sbdp_core::ipm::{self, IpmError, IpmOptions, SmoothNlp};
use sbdp_core::{Matrix, Vector};
use thiserror::Error;

use crate::logreg::LogregData;

#[derive(Debug, Error)]
pub enum AdmmError {
    #[error("penalty must be positive and finite")]
    Penalty,
    #[error("diverged at iteration {iter}: error {error:.3e}")]
    Diverged { iter: usize, error: f64 },
    #[error("block {block} update failed at iteration {iter}: {source}")]
    Block {
        iter: usize,
        block: usize,
        source: IpmError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub penalty: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            penalty: 0.1,
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmTrace {
    /// `‖x^q - x*‖₂` for `q = 0, 1, ...`.
    pub errors: Vec<f64>,
    pub x: DVector<f64>,
    pub converged: bool,
}

impl AdmmTrace {
    /// First iteration with error at or below `level`.
    pub fn first_below(&self, level: f64) -> Option<usize> {
        self.errors.iter().position(|&e| e <= level)
    }
}

/// `min (ε/2)‖x‖² + (ρ/2)‖A x - c‖²  s.t. |x| <= bound`.
struct BlockQp {
    gram: Matrix,
    lin: Vector,
    bound: f64,
}

impl SmoothNlp for BlockQp {
    fn dim(&self) -> usize {
        self.lin.len()
    }
    fn n_eq(&self) -> usize {
        0
    }
    fn n_ineq(&self) -> usize {
        2 * self.lin.len()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        &self.gram * x - &self.lin
    }
    fn equalities(&self, _x: &Vector) -> Vector {
        Vector::zeros(0)
    }
    fn inequalities(&self, x: &Vector) -> Vector {
        let n = x.len();
        Vector::from_fn(2 * n, |k, _| {
            if k < n {
                x[k] - self.bound
            } else {
                -x[k - n] - self.bound
            }
        })
    }
    fn eq_jacobian(&self, x: &Vector) -> Matrix {
        Matrix::zeros(0, x.len())
    }
    fn ineq_jacobian(&self, x: &Vector) -> Matrix {
        let n = x.len();
        let mut j = Matrix::zeros(2 * n, n);
        for k in 0..n {
            j[(k, k)] = 1.0;
            j[(n + k, k)] = -1.0;
        }
        j
    }
    fn lagrangian_hessian(&self, _x: &Vector, _l: &Vector, _m: &Vector) -> Matrix {
        self.gram.clone()
    }
}

/// Minimizer of `(1/m) log(1 + exp(-N z)) + (Nρ/2)(z - v)²` by safeguarded Newton.
fn margin_update(v: f64, agents: f64, m: f64, rho: f64) -> f64 {
    let mut z = v;
    for _ in 0..100 {
        let w = agents * z;
        let s = 1.0 / (1.0 + w.exp());
        let grad = -agents * s / m + agents * rho * (z - v);
        let hess = agents * agents * s * (1.0 - s) / m + agents * rho;
        let step = grad / hess;
        z -= step;
        if step.abs() <= 1e-15 * (1.0 + z.abs()) {
            break;
        }
    }
    z
}

/// Runs ADMM from zero and records the distance to `x_star` every iteration.
/// Stops when the primal and dual residuals fall below `tol`.
pub fn admm_logreg(
    data: &LogregData,
    x_star: &DVector<f64>,
    cfg: &AdmmConfig,
) -> Result<AdmmTrace, AdmmError> {
    if !(cfg.penalty.is_finite() && cfg.penalty > 0.0) {
        return Err(AdmmError::Penalty);
    }
    let p = &data.params;
    let (m, agents) = (data.signed.nrows(), p.agents);
    let block = p.features / agents;
    let rho = cfg.penalty;
    let blocks: Vec<DMatrix<f64>> = (0..agents)
        .map(|i| data.signed.columns(i * block, block).into_owned())
        .collect();
    let grams: Vec<Matrix> = blocks
        .iter()
        .map(|a| a.tr_mul(a) * rho + Matrix::identity(block, block) * p.eps_reg)
        .collect();

    let mut x: Vec<Vector> = vec![Vector::zeros(block); agents];
    let mut ax: Vec<Vector> = vec![Vector::zeros(m); agents];
    let mut z_bar = Vector::zeros(m);
    let mut u = Vector::zeros(m);
    let opts = IpmOptions {
        tol: 1e-12,
        ..IpmOptions::default()
    };
    let stacked =
        |x: &[Vector]| DVector::from_iterator(p.features, x.iter().flat_map(|b| b.iter().copied()));
    let mut errors = vec![(stacked(&x) - x_star).norm()];
    let mut converged = false;
    for iter in 1..=cfg.max_iter {
        let mean: Vector = ax.iter().fold(Vector::zeros(m), |acc, v| acc + v) / agents as f64;
        for i in 0..agents {
            let target = &ax[i] + &z_bar - &mean - &u;
            let qp = BlockQp {
                gram: grams[i].clone(),
                lin: blocks[i].tr_mul(&target) * rho,
                bound: p.box_bound,
            };
            let sol = ipm::solve(&qp, &x[i], None, &opts).map_err(|source| AdmmError::Block {
                iter,
                block: i,
                source,
            })?;
            x[i] = sol.x;
            ax[i] = &blocks[i] * &x[i];
        }
        let mean: Vector = ax.iter().fold(Vector::zeros(m), |acc, v| acc + v) / agents as f64;
        let prev = z_bar.clone();
        let v = &mean + &u;
        z_bar = v.map(|vk| margin_update(vk, agents as f64, m as f64, rho));
        u += &mean - &z_bar;

        let err = (stacked(&x) - x_star).norm();
        errors.push(err);
        if !err.is_finite() || err > 1e6 {
            return Err(AdmmError::Diverged { iter, error: err });
        }
        let primal = (&mean - &z_bar).norm() * (agents as f64).sqrt();
        let dual = (&z_bar - &prev).norm() * rho * agents as f64;
        if primal <= cfg.tol && dual <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(AdmmTrace {
        errors,
        x: stacked(&x),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logreg::{build_graph, generate, LogregParams};
    use sbdp_core::central::solve_central;

    #[test]
    fn margin_update_solves_scalar_problem() {
        let (n, m, rho) = (3.0, 10.0, 0.1);
        for v in [-2.0, 0.0, 0.7] {
            let z = margin_update(v, n, m, rho);
            let s = 1.0 / (1.0 + (n * z).exp());
            assert!((-n * s / m + n * rho * (z - v)).abs() <= 1e-13);
        }
    }

    #[test]
    fn single_block_converges_quickly() {
        let params = LogregParams {
            samples: 4,
            features: 2,
            agents: 1,
            seed: 3,
            ..LogregParams::default()
        };
        let data = generate(&params).unwrap();
        let g = build_graph(&data).unwrap();
        let star = solve_central(&g, &Vector::zeros(2), 1e-12).unwrap();
        let trace = admm_logreg(
            &data,
            &star.x,
            &AdmmConfig {
                penalty: 1.0,
                tol: 1e-10,
                max_iter: 500,
            },
        )
        .unwrap();
        assert!(trace.converged);
        assert!(*trace.errors.last().unwrap() <= 1e-7);
    }

    #[test]
    fn rejects_bad_penalty() {
        let data = generate(&LogregParams {
            samples: 4,
            features: 2,
            agents: 1,
            ..LogregParams::default()
        })
        .unwrap();
        let cfg = AdmmConfig {
            penalty: 0.0,
            ..AdmmConfig::default()
        };
        assert!(matches!(
            admm_logreg(&data, &DVector::zeros(2), &cfg),
            Err(AdmmError::Penalty)
        ));
    }
}
