use crate::linalg::{max_sym_eigenvalue, min_sym_eigenvalue, Matrix, Vector};
use crate::local_nlp::LocalSolution;
use crate::model::{
    central_hessian, central_inequalities, central_jacobians, local_lagrangian_hessian,
    PrimalDualPoint, ProblemGraph,
};

use super::matrices::penalty_for;
use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaChoice {
    pub beta: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// The denominator vanished and the default `β = 1` was returned.
    pub defaulted: bool,
}

/// Stacks the local solutions into `(x̄, ν, κ)` with `x̄ = x + s`.
fn shifted_point(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    local: &[LocalSolution],
) -> PrimalDualPoint {
    let mut out = point.clone();
    for (i, y) in local.iter().enumerate() {
        let (xr, gr, hr) = (graph.x_range(i), graph.g_range(i), graph.h_range(i));
        let mut xs = out.x.rows_mut(xr.start, xr.len());
        xs += &y.s;
        out.lambda.rows_mut(gr.start, gr.len()).copy_from(&y.nu);
        out.mu.rows_mut(hr.start, hr.len()).copy_from(&y.kappa);
    }
    out
}

/// `β = λ_min(∇²L(x̄, ν, κ) [+ γR]) / λ_max(Jᵀ K̄ J)` with `J = [J_g; J_h]`
/// at `x̄` and `K̄ = diag(1, κ)`.
pub fn tune_beta(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    local: &[LocalSolution],
    gamma: f64,
    partial: bool,
) -> BetaChoice {
    let bar = shifted_point(graph, point, local);
    let mut hess = central_hessian(graph, &bar);
    if gamma != 0.0 {
        hess += penalty_for(graph, &bar.x, &bar.mu, partial) * gamma;
    }
    let numerator = min_sym_eigenvalue(&hess);
    let (jg, jh) = central_jacobians(graph, &bar.x);
    let mut kj = jh.clone();
    for k in 0..kj.nrows() {
        kj.row_mut(k).scale_mut(bar.mu[k]);
    }
    let jkj: Matrix = jg.tr_mul(&jg) + jh.tr_mul(&kj);
    let denominator = max_sym_eigenvalue(&jkj).max(0.0);
    if denominator <= 1e-14 {
        log::warn!("dual step size rule has no constraint curvature; using beta = 1");
        return BetaChoice {
            beta: 1.0,
            numerator,
            denominator,
            defaulted: true,
        };
    }
    BetaChoice {
        beta: numerator / denominator,
        numerator,
        denominator,
        defaulted: false,
    }
}

/// Smallest `ρ >= 0` making every `∇²_{x_i x_i} L_i + ρI` positive definite (margin `1e-8`).
pub fn min_rho(graph: &ProblemGraph, point: &PrimalDualPoint) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..graph.num_agents() {
        let s = point.agent_slice(graph, i);
        let z = graph.gather_z(i, &point.x);
        let n = graph.agent(i).dim;
        let h = local_lagrangian_hessian(graph.agent(i).oracle.as_ref(), &z, &s.lambda, &s.mu);
        worst = worst.max(-min_sym_eigenvalue(&h.view((0, 0), (n, n)).into_owned()));
    }
    (worst + 1e-8).max(0.0)
}

/// Smallest `γ` (bisection on `[0, 1e4]` to `1e-3`) with
/// `∇²L + γ Jᵀ Ū² J ≻ 0`, where `J` stacks equality rows and active
/// inequality rows (`|h_k| <= tau`), weighted by 1 and `μ_k` respectively.
/// `partial` keeps decoupled rows only.
pub fn min_gamma(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    partial: bool,
    tau: f64,
) -> Result<f64, AnalysisError> {
    let hess = central_hessian(graph, point);
    let h = central_inequalities(graph, &point.x);
    let mu_active = Vector::from_iterator(
        h.len(),
        (0..h.len()).map(|k| if h[k].abs() <= tau { point.mu[k] } else { 0.0 }),
    );
    let r = penalty_for(graph, &point.x, &mu_active, partial);
    let pd = |g: f64| min_sym_eigenvalue(&(&hess + &r * g)) > 0.0;
    let (mut lo, mut hi) = (0.0, 1e4);
    if pd(lo) {
        return Ok(0.0);
    }
    if !pd(hi) {
        return Err(AnalysisError::NoGamma { largest: hi });
    }
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if pd(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
