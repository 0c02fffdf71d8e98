//! Dense primal-dual interior-point method for small smooth NLPs
//!
//! `min f(x)  s.t.  g(x) = 0,  h(x) <= 0`
//!
//! Inequalities receive slacks `w > 0` with `h(x) + w = 0`. Each Newton step
//! condenses the slack and inequality-multiplier rows into
//! `[H + Jhᵀ W⁻¹ U Jh, Jgᵀ; Jg, 0]`, solved by dense LU.

use thiserror::Error;

use crate::linalg::{inf_norm, min_sym_eigenvalue, null_space, Matrix, Vector};

pub trait SmoothNlp {
    fn dim(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn gradient(&self, x: &Vector) -> Vector;
    fn equalities(&self, x: &Vector) -> Vector;
    fn inequalities(&self, x: &Vector) -> Vector;
    fn eq_jacobian(&self, x: &Vector) -> Matrix;
    fn ineq_jacobian(&self, x: &Vector) -> Matrix;
    /// `∇²f + Σ λ_k ∇²g_k + Σ μ_k ∇²h_k`.
    fn lagrangian_hessian(&self, x: &Vector, lambda: &Vector, mu: &Vector) -> Matrix;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    pub mu_shrink: f64,
    pub fraction_to_boundary: f64,
    pub min_curvature: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            mu_init: 0.1,
            mu_shrink: 0.2,
            fraction_to_boundary: 0.995,
            min_curvature: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmSolution {
    pub x: Vector,
    pub lambda: Vector,
    pub mu: Vector,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpmError {
    #[error("no convergence within {iterations} iterations (best residual {:e})", best.kkt_residual)]
    MaxIterations {
        iterations: usize,
        best: Box<IpmSolution>,
    },
    #[error("problem appears infeasible: primal residual stalls at {residual:e}")]
    Infeasible { residual: f64 },
    #[error("singular Newton system")]
    Singular,
    #[error("non-finite function values")]
    NonFinite,
}

/// Max-norm KKT residual of `nlp` at `(x, λ, μ)`.
pub fn kkt_residual<N: SmoothNlp + ?Sized>(
    nlp: &N,
    x: &Vector,
    lambda: &Vector,
    mu: &Vector,
) -> f64 {
    let mut grad = nlp.gradient(x);
    if !lambda.is_empty() {
        grad += nlp.eq_jacobian(x).tr_mul(lambda);
    }
    let h = nlp.inequalities(x);
    if !mu.is_empty() {
        grad += nlp.ineq_jacobian(x).tr_mul(mu);
    }
    let feas_h = h.iter().fold(0.0_f64, |a, v| a.max(*v));
    let sign = mu.iter().fold(0.0_f64, |a, v| a.max(-v));
    inf_norm(&grad)
        .max(inf_norm(&nlp.equalities(x)))
        .max(feas_h)
        .max(sign)
        .max(inf_norm(&mu.component_mul(&h)))
}

struct Eval {
    grad: Vector,
    g: Vector,
    h: Vector,
    jg: Matrix,
    jh: Matrix,
}

fn evaluate<N: SmoothNlp + ?Sized>(nlp: &N, x: &Vector) -> Eval {
    Eval {
        grad: nlp.gradient(x),
        g: nlp.equalities(x),
        h: nlp.inequalities(x),
        jg: nlp.eq_jacobian(x),
        jh: nlp.ineq_jacobian(x),
    }
}

struct Residuals {
    dual: Vector,
    ineq: Vector,
    compl: Vector,
}

fn residuals(e: &Eval, lambda: &Vector, w: &Vector, mu: &Vector, mu_b: f64) -> Residuals {
    let mut dual = e.grad.clone();
    if !lambda.is_empty() {
        dual += e.jg.tr_mul(lambda);
    }
    if !mu.is_empty() {
        dual += e.jh.tr_mul(mu);
    }
    Residuals {
        dual,
        ineq: &e.h + w,
        compl: w.component_mul(mu).add_scalar(-mu_b),
    }
}

fn merit(r: &Residuals, g: &Vector) -> f64 {
    (r.dual.norm_squared() + g.norm_squared() + r.ineq.norm_squared() + r.compl.norm_squared())
        .sqrt()
}

fn barrier_error(r: &Residuals, g: &Vector) -> f64 {
    inf_norm(&r.dual)
        .max(inf_norm(g))
        .max(inf_norm(&r.ineq))
        .max(inf_norm(&r.compl))
}

fn true_error(e: &Eval, r: &Residuals, mu: &Vector) -> f64 {
    let feas_h = e.h.iter().fold(0.0_f64, |a, v| a.max(*v));
    inf_norm(&r.dual)
        .max(inf_norm(&e.g))
        .max(feas_h)
        .max(inf_norm(&mu.component_mul(&e.h)))
}

fn max_step(v: &Vector, dv: &Vector, tau: f64) -> f64 {
    v.iter().zip(dv.iter()).fold(
        1.0_f64,
        |a, (vi, di)| {
            if *di < 0.0 {
                a.min(-tau * vi / di)
            } else {
                a
            }
        },
    )
}

/// Solves `nlp` from `x0`. `warm` supplies multiplier estimates `(λ, μ)`.
pub fn solve<N: SmoothNlp + ?Sized>(
    nlp: &N,
    x0: &Vector,
    warm: Option<(&Vector, &Vector)>,
    opts: &IpmOptions,
) -> Result<IpmSolution, IpmError> {
    let (n, ng, nh) = (nlp.dim(), nlp.n_eq(), nlp.n_ineq());
    let mu_min = opts.tol * 0.1;
    let mut x = x0.clone();
    let mut e = evaluate(nlp, &x);
    if !finite(&e) {
        return Err(IpmError::NonFinite);
    }

    let (mut lambda, mut w, mut mu, mut mu_b);
    match warm {
        Some((l0, m0)) if l0.len() == ng && m0.len() == nh => {
            lambda = l0.clone();
            w = e.h.map(|v| (-v).max(1e-4));
            let floor = m0.map(|v| v.max(1e-8));
            mu_b = if nh > 0 {
                (w.component_mul(&floor).sum() / nh as f64).clamp(mu_min, opts.mu_init)
            } else {
                mu_min
            };
            mu = Vector::from_iterator(nh, (0..nh).map(|k| m0[k].max(mu_b / w[k])));
        }
        _ => {
            lambda = Vector::zeros(ng);
            w = e.h.map(|v| (-v).max(0.1));
            mu_b = if nh > 0 { opts.mu_init } else { mu_min };
            mu = w.map(|v| mu_b / v);
        }
    }

    let mut best: Option<IpmSolution> = None;
    let mut primal_hist: Vec<f64> = Vec::new();
    for iter in 0..=opts.max_iter {
        let mut r = residuals(&e, &lambda, &w, &mu, mu_b);
        let err = true_error(&e, &r, &mu);
        if best.as_ref().is_none_or(|b| err < b.kkt_residual) {
            best = Some(IpmSolution {
                x: x.clone(),
                lambda: lambda.clone(),
                mu: mu.clone(),
                kkt_residual: err,
                iterations: iter,
            });
        }
        if err <= opts.tol && mu_b <= opts.tol {
            return Ok(best.unwrap());
        }
        if iter == opts.max_iter {
            break;
        }

        let primal = inf_norm(&e.g).max(inf_norm(&r.ineq));
        primal_hist.push(primal);
        if iter >= 30 && primal > opts.tol * 1e3 {
            let past = primal_hist[iter - 15];
            if primal >= 0.99 * past {
                return Err(IpmError::Infeasible { residual: primal });
            }
        }

        while mu_b > mu_min && barrier_error(&r, &e.g) <= 10.0 * mu_b {
            mu_b = (opts.mu_shrink * mu_b).min(mu_b.powf(1.5)).max(mu_min);
            r.compl = w.component_mul(&mu).add_scalar(-mu_b);
        }

        // Condensed Newton system.
        let sigma = Vector::from_iterator(nh, (0..nh).map(|k| mu[k] / w[k]));
        let mut hc = nlp.lagrangian_hessian(&x, &lambda, &mu);
        if nh > 0 {
            let scaled = Matrix::from_fn(nh, n, |k, c| sigma[k] * e.jh[(k, c)]);
            hc += e.jh.tr_mul(&scaled);
        }
        let hc = (&hc + hc.transpose()) * 0.5;
        let shift = curvature_shift(&hc, &e.jg, opts.min_curvature);
        let mut rhs1 = -&r.dual;
        if nh > 0 {
            let t = Vector::from_iterator(
                nh,
                (0..nh).map(|k| sigma[k] * r.ineq[k] - r.compl[k] / w[k]),
            );
            rhs1 -= e.jh.tr_mul(&t);
        }
        let (dx, dlambda) = newton_solve(&hc, shift, &e.jg, &rhs1, &(-&e.g))?;
        let jh_dx = &e.jh * &dx;
        let dw = -&r.ineq - &jh_dx;
        let dmu = Vector::from_iterator(
            nh,
            (0..nh).map(|k| sigma[k] * (jh_dx[k] + r.ineq[k]) - r.compl[k] / w[k]),
        );

        let tau = opts.fraction_to_boundary;
        // One step length for all blocks keeps the Newton direction a descent
        // direction of the residual norm.
        let ap = max_step(&w, &dw, tau).min(max_step(&mu, &dmu, tau));
        let ad = ap;
        let m0 = merit(&r, &e.g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xt = &x + &dx * (ap * t);
            let et = evaluate(nlp, &xt);
            if finite(&et) {
                let wt = &w + &dw * (ap * t);
                let lt = &lambda + &dlambda * (ad * t);
                let mt = &mu + &dmu * (ad * t);
                let rt = residuals(&et, &lt, &wt, &mt, mu_b);
                let accept = merit(&rt, &et.g) <= (1.0 - 1e-4 * t) * m0;
                accepted = Some((xt, et, wt, lt, mt));
                if accept {
                    break;
                }
            }
            t *= 0.5;
        }
        log::trace!(
            "ipm {iter}: err {err:.3e} mu_b {mu_b:.3e} step {:.3e}",
            ap * t
        );
        let Some((xt, et, wt, lt, mt)) = accepted else {
            return Err(IpmError::NonFinite);
        };
        x = xt;
        e = et;
        w = wt;
        lambda = lt;
        mu = mt;
    }
    Err(IpmError::MaxIterations {
        iterations: opts.max_iter,
        best: Box::new(best.unwrap()),
    })
}

fn finite(e: &Eval) -> bool {
    e.grad.iter().all(|v| v.is_finite())
        && e.g.iter().all(|v| v.is_finite())
        && e.h.iter().all(|v| v.is_finite())
}

// Diagonal shift that makes the Hessian positive definite on the null space
// of the equality Jacobian, with smallest eigenvalue at least `min_curv`.
fn curvature_shift(hc: &Matrix, jg: &Matrix, min_curv: f64) -> f64 {
    let n = hc.nrows();
    if n == 0 {
        return 0.0;
    }
    let lmin = if jg.nrows() == 0 {
        min_sym_eigenvalue(hc)
    } else {
        let z = null_space(jg, 1e-12);
        if z.ncols() == 0 {
            return 0.0;
        }
        min_sym_eigenvalue(&(z.transpose() * hc * &z))
    };
    if lmin < min_curv {
        min_curv - lmin
    } else {
        0.0
    }
}

fn newton_solve(
    hc: &Matrix,
    shift: f64,
    jg: &Matrix,
    rhs1: &Vector,
    rhs2: &Vector,
) -> Result<(Vector, Vector), IpmError> {
    let (n, ng) = (hc.nrows(), jg.nrows());
    let mut rhs = Vector::zeros(n + ng);
    rhs.rows_mut(0, n).copy_from(rhs1);
    rhs.rows_mut(n, ng).copy_from(rhs2);
    for delta in [0.0, 1e-10, 1e-8] {
        let mut k = Matrix::zeros(n + ng, n + ng);
        k.view_mut((0, 0), (n, n)).copy_from(hc);
        for d in 0..n {
            k[(d, d)] += shift;
        }
        k.view_mut((0, n), (n, ng)).copy_from(&jg.transpose());
        k.view_mut((n, 0), (ng, n)).copy_from(jg);
        for d in 0..ng {
            k[(n + d, n + d)] = -delta;
        }
        if let Some(sol) = k.full_piv_lu().solve(&rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                return Ok((sol.rows(0, n).into_owned(), sol.rows(n, ng).into_owned()));
            }
        }
    }
    Err(IpmError::Singular)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// min (x0-1)² + (x1-2)²  s.t. x0 + x1 = 1, x0 >= 0.5 (as 0.5 - x0 <= 0).
    struct Small;
    impl SmoothNlp for Small {
        fn dim(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn n_ineq(&self) -> usize {
            1
        }
        fn gradient(&self, x: &Vector) -> Vector {
            Vector::from_vec(vec![2.0 * (x[0] - 1.0), 2.0 * (x[1] - 2.0)])
        }
        fn equalities(&self, x: &Vector) -> Vector {
            Vector::from_vec(vec![x[0] + x[1] - 1.0])
        }
        fn inequalities(&self, x: &Vector) -> Vector {
            Vector::from_vec(vec![0.5 - x[0]])
        }
        fn eq_jacobian(&self, _x: &Vector) -> Matrix {
            Matrix::from_row_slice(1, 2, &[1.0, 1.0])
        }
        fn ineq_jacobian(&self, _x: &Vector) -> Matrix {
            Matrix::from_row_slice(1, 2, &[-1.0, 0.0])
        }
        fn lagrangian_hessian(&self, _x: &Vector, _l: &Vector, _m: &Vector) -> Matrix {
            Matrix::identity(2, 2) * 2.0
        }
    }

    #[test]
    fn active_bound_solution() {
        // Unconstrained-by-bound optimum of the equality problem is x = (0, 1),
        // so the bound x0 >= 0.5 is active: x = (0.5, 0.5), λ = 3, μ = 2.
        let sol = solve(&Small, &Vector::zeros(2), None, &IpmOptions::default()).unwrap();
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(sol.x[1], 0.5, epsilon = 1e-8);
        assert_relative_eq!(sol.lambda[0], 3.0, epsilon = 1e-7);
        assert_relative_eq!(sol.mu[0], 2.0, epsilon = 1e-7);
        assert!(sol.kkt_residual <= 1e-10);
    }

    #[test]
    fn warm_start_from_solution_is_fast() {
        let opts = IpmOptions::default();
        let cold = solve(&Small, &Vector::zeros(2), None, &opts).unwrap();
        let warm = solve(&Small, &cold.x, Some((&cold.lambda, &cold.mu)), &opts).unwrap();
        assert!(warm.iterations <= cold.iterations);
    }

    struct Infeasible;
    impl SmoothNlp for Infeasible {
        fn dim(&self) -> usize {
            1
        }
        fn n_eq(&self) -> usize {
            0
        }
        fn n_ineq(&self) -> usize {
            2
        }
        fn gradient(&self, x: &Vector) -> Vector {
            x.clone()
        }
        fn equalities(&self, _x: &Vector) -> Vector {
            Vector::zeros(0)
        }
        fn inequalities(&self, x: &Vector) -> Vector {
            Vector::from_vec(vec![1.0 - x[0], x[0] + 1.0])
        }
        fn eq_jacobian(&self, _x: &Vector) -> Matrix {
            Matrix::zeros(0, 1)
        }
        fn ineq_jacobian(&self, _x: &Vector) -> Matrix {
            Matrix::from_row_slice(2, 1, &[-1.0, 1.0])
        }
        fn lagrangian_hessian(&self, _x: &Vector, _l: &Vector, _m: &Vector) -> Matrix {
            Matrix::identity(1, 1)
        }
    }

    #[test]
    fn detects_infeasibility() {
        let res = solve(&Infeasible, &Vector::zeros(1), None, &IpmOptions::default());
        assert!(
            matches!(
                res,
                Err(IpmError::Infeasible { .. }) | Err(IpmError::MaxIterations { .. })
            ),
            "{res:?}"
        );
    }
}
