use nalgebra::Complex;

use crate::linalg::{
    eigenvalues, inverse_cholesky_factor, kron, max_abs, spectral_radius, sym_eigenvalues, Matrix,
    Vector,
};

use super::{AnalysisError, LYAPUNOV_MAX_DIM};

/// Step-size bound from the spectrum of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeBound {
    /// `min 2Re(λ)/|λ|²` capped at 1; `None` certifies divergence for every
    /// step size because some eigenvalue has `Re(λ) <= 0`.
    pub alpha_bar: Option<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
}

pub fn max_step_size(a: &Matrix) -> Result<StepSizeBound, AnalysisError> {
    let ev = eigenvalues(a)?;
    let scale = max_abs(a).max(1.0);
    let mut bound = 1.0_f64;
    let mut ok = true;
    for z in &ev {
        if z.re <= 1e-13 * scale {
            ok = false;
        } else {
            bound = bound.min(2.0 * z.re / z.norm_sqr());
        }
    }
    Ok(StepSizeBound {
        alpha_bar: ok.then_some(bound),
        eigenvalues: ev,
    })
}

/// Dimensions up to this size use the vectorized Kronecker solve.
const KRONECKER_MAX_DIM: usize = 30;

/// Solves `A_clᵀ P A_cl - P = -Q` for symmetric `P ≻ 0`.
pub fn solve_discrete_lyapunov(a_cl: &Matrix, q: &Matrix) -> Result<Matrix, AnalysisError> {
    let p = a_cl.nrows();
    if p > LYAPUNOV_MAX_DIM {
        return Err(AnalysisError::TooLarge(p));
    }
    let radius = spectral_radius(a_cl)?;
    if radius >= 1.0 {
        return Err(AnalysisError::NotSchurStable { radius });
    }
    let sol = if p <= KRONECKER_MAX_DIM {
        lyapunov_kronecker(a_cl, q)?
    } else {
        lyapunov_smith(a_cl, q)
    };
    Ok((&sol + sol.transpose()) * 0.5)
}

/// `(I - A_clᵀ ⊗ A_clᵀ) vec(P) = vec(Q)`.
pub fn lyapunov_kronecker(a_cl: &Matrix, q: &Matrix) -> Result<Matrix, AnalysisError> {
    let p = a_cl.nrows();
    let at = a_cl.transpose();
    let sys = Matrix::identity(p * p, p * p) - kron(&at, &at);
    let rhs = Vector::from_column_slice(q.as_slice());
    let v = sys
        .full_piv_lu()
        .solve(&rhs)
        .ok_or(crate::linalg::LinalgError::Singular)?;
    Ok(Matrix::from_column_slice(p, p, v.as_slice()))
}

/// Doubling iteration `P ← P + A_kᵀ P A_k`, `A_k ← A_k²` for the series
/// `Σ (A_clᵀ)^j Q A_cl^j`.
pub fn lyapunov_smith(a_cl: &Matrix, q: &Matrix) -> Matrix {
    let mut p = q.clone();
    let mut ak = a_cl.clone();
    for _ in 0..64 {
        let term = ak.transpose() * &p * &ak;
        p += &term;
        if max_abs(&term) <= 1e-17 * max_abs(&p) {
            break;
        }
        ak = &ak * &ak;
    }
    p
}

/// `(C, C0, C1)` from a Lyapunov pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    /// `‖A_cl‖_P`, the Q-linear rate in the `P`-weighted norm.
    pub c: f64,
    /// `sqrt(λ_max(P)/λ_min(P))`.
    pub c0: f64,
    /// `sqrt(1 - e/λ_max(P))` with `e = (1 - 1e-6) λ_min(Q)`.
    pub c1: f64,
}

pub fn convergence_constants(p_bar: &Matrix, q: &Matrix) -> Result<RateConstants, AnalysisError> {
    let linv = inverse_cholesky_factor(p_bar)?;
    let x = &linv * (p_bar - q) * linv.transpose();
    let lmax_x = sym_eigenvalues(&x).last().copied().unwrap_or(0.0);
    let ev = sym_eigenvalues(p_bar);
    let (pmin, pmax) = (ev[0], *ev.last().unwrap());
    let e = (1.0 - 1e-6) * sym_eigenvalues(q)[0];
    Ok(RateConstants {
        c: lmax_x.max(0.0).sqrt(),
        c0: (pmax / pmin).sqrt(),
        c1: (1.0 - e / pmax).max(0.0).sqrt(),
    })
}

/// `sqrt(vᵀ P v)`.
pub fn p_norm(v: &Vector, p_bar: &Matrix) -> f64 {
    v.dot(&(p_bar * v)).max(0.0).sqrt()
}
