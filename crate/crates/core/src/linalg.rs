//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("eigenvalue iteration did not converge for a {0}x{0} matrix")]
    EigenNoConvergence(usize),
    #[error("matrix is singular")]
    Singular,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Eigenvalues of the symmetric part of `m`, sorted ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Smallest eigenvalue of the symmetric part; `+inf` for an empty matrix.
pub fn min_sym_eigenvalue(m: &Matrix) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Largest eigenvalue of the symmetric part; `-inf` for an empty matrix.
pub fn max_sym_eigenvalue(m: &Matrix) -> f64 {
    sym_eigenvalues(m)
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY)
}

/// Eigenvalues of a general real square matrix.
///
/// Hessenberg reduction followed by shifted QR (real Schur form); complex
/// conjugate pairs are returned as such.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex<f64>>, LinalgError> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), 1e-14, 10_000)
        .ok_or(LinalgError::EigenNoConvergence(n))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Induced 2-norm.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Smallest singular value of a matrix with at least as many columns as rows
/// (row-rank test). Returns 0 when there are more rows than columns.
pub fn min_row_singular_value(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() > m.ncols() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis of the null space of `j` (columns), computed from a full SVD.
pub fn null_space(j: &Matrix, tol: f64) -> Matrix {
    let n = j.ncols();
    if j.nrows() == 0 {
        return Matrix::identity(n, n);
    }
    // Pad to a square matrix so that the SVD returns a full V.
    let rows = j.nrows().max(n);
    let mut padded = Matrix::zeros(rows, n);
    padded.view_mut((0, 0), (j.nrows(), n)).copy_from(j);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let scale = svd
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(1.0);
    let null_rows: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] <= tol * scale)
        .collect();
    let mut z = Matrix::zeros(n, null_rows.len());
    for (c, &k) in null_rows.iter().enumerate() {
        z.set_column(c, &v_t.row(k).transpose());
    }
    z
}

pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc))
                    .copy_from(&(b * aij));
            }
        }
    }
    out
}

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn inf_norm_slice(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Largest absolute entry of a matrix.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Cholesky-based inverse square-root factor: returns `L^{-1}` with `P = L Lᵀ`.
pub fn inverse_cholesky_factor(p: &Matrix) -> Result<Matrix, LinalgError> {
    let chol = p
        .clone()
        .cholesky()
        .ok_or(LinalgError::NotPositiveDefinite)?;
    let l = chol.l();
    l.try_inverse().ok_or(LinalgError::Singular)
}

pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    a.clone()
        .full_piv_lu()
        .solve(b)
        .ok_or(LinalgError::Singular)
}

pub fn solve_vec(a: &Matrix, b: &Vector) -> Result<Vector, LinalgError> {
    if a.nrows() == 0 {
        return Ok(Vector::zeros(0));
    }
    a.clone()
        .full_piv_lu()
        .solve(b)
        .ok_or(LinalgError::Singular)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn complex_pair_eigenvalues() {
        // Rotation-like matrix with eigenvalues ±2j.
        let m = Matrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let mut ev = eigenvalues(&m).unwrap();
        ev.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert_relative_eq!(ev[0].re, 0.0, epsilon = 1e-14);
        assert_relative_eq!(ev[0].im, -2.0, epsilon = 1e-14);
        assert_relative_eq!(ev[1].im, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn null_space_of_row() {
        let j = Matrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]);
        let z = null_space(&j, 1e-12);
        assert_eq!(z.ncols(), 2);
        assert!(max_abs(&(&j * &z)) < 1e-14);
        assert!(max_abs(&(z.transpose() * &z - Matrix::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn kron_matches_vec_identity() {
        // vec(A X B) = (Bᵀ ⊗ A) vec(X) with column-major vec.
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 1.5]);
        let x = Matrix::from_row_slice(2, 2, &[1.0, -2.0, 0.25, 3.0]);
        let lhs = &a * &x * &b;
        let rhs = kron(&b.transpose(), &a) * Vector::from_column_slice(x.as_slice());
        for (l, r) in lhs.as_slice().iter().zip(rhs.iter()) {
            assert_relative_eq!(*l, *r, epsilon = 1e-13);
        }
    }
}
