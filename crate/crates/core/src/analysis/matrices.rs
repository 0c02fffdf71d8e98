use nalgebra::DVector;

use crate::engine::{mixing_matrix, Variant};
use crate::linalg::{spectral_norm, spectral_radius, Matrix, Vector};
use crate::local_nlp::{solve_local_nlp, LocalError, LocalNlp, LocalSolution};
use crate::model::{
    central_hessian, central_inequalities, central_jacobians, local_lagrangian_hessian,
    neighbor_lagrangian_gradient, PrimalDualPoint, ProblemGraph,
};

use super::AnalysisError;

/// Solves every local subproblem at `point`, with sensitivities computed
/// directly from the point.
pub fn local_solutions_at(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    rho: f64,
    tol: f64,
    warm: Option<&[LocalSolution]>,
) -> Result<Vec<(LocalNlp, LocalSolution)>, LocalError> {
    (0..graph.num_agents())
        .map(|i| {
            let mut c = Vector::zeros(graph.agent(i).dim);
            for &j in graph.neighbors(i) {
                c += neighbor_lagrangian_gradient(graph, j, i, point)?;
            }
            let nlp = LocalNlp::new(graph, i, graph.gather_z(i, &point.x), rho, c)?;
            let y = solve_local_nlp(&nlp, warm.map(|w| &w[i]), tol)?;
            Ok((nlp, y))
        })
        .collect()
}

// Rows of the decoupled constraints in the central ordering.
fn decoupled_rows(graph: &ProblemGraph) -> (Vec<usize>, Vec<usize>) {
    let mut g = Vec::new();
    let mut h = Vec::new();
    for i in 0..graph.num_agents() {
        let a = graph.agent(i);
        g.extend(graph.g_range(i).take(a.decoupled_eq));
        h.extend(graph.h_range(i).take(a.decoupled_ineq));
    }
    (g, h)
}

fn select_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

/// `R = J_gᵀJ_g + J_hᵀU²J_h` over all rows, or over decoupled rows only.
fn penalty_matrix(
    graph: &ProblemGraph,
    jg: &Matrix,
    jh: &Matrix,
    mu: &Vector,
    partial: bool,
) -> Matrix {
    let (jg, jh, mu) = if partial {
        let (gr, hr) = decoupled_rows(graph);
        let mu = DVector::from_iterator(hr.len(), hr.iter().map(|&k| mu[k]));
        (select_rows(jg, &gr), select_rows(jh, &hr), mu)
    } else {
        (jg.clone(), jh.clone(), mu.clone())
    };
    let mut uj = jh.clone();
    for k in 0..uj.nrows() {
        uj.row_mut(k).scale_mut(mu[k] * mu[k]);
    }
    jg.tr_mul(&jg) + jh.tr_mul(&uj)
}

/// `A(p) = [L + γR, J_gᵀ, J_hᵀ; -βJ_g, 0, 0; -βU J_h, 0, -βH]` with
/// `U = diag(μ)`, `H = diag(h(x))`; `partial` restricts `R` to decoupled rows.
pub fn assemble_a(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    beta: f64,
    gamma: f64,
    partial: bool,
) -> Matrix {
    let (n, ng, nh) = (graph.n(), graph.n_g(), graph.n_h());
    let (jg, jh) = central_jacobians(graph, &point.x);
    let h = central_inequalities(graph, &point.x);
    let mut top = central_hessian(graph, point);
    if gamma != 0.0 {
        top += penalty_matrix(graph, &jg, &jh, &point.mu, partial) * gamma;
    }
    let mut a = Matrix::zeros(n + ng + nh, n + ng + nh);
    a.view_mut((0, 0), (n, n)).copy_from(&top);
    a.view_mut((0, n), (n, ng)).copy_from(&jg.transpose());
    a.view_mut((0, n + ng), (n, nh)).copy_from(&jh.transpose());
    a.view_mut((n, 0), (ng, n)).copy_from(&(&jg * -beta));
    for k in 0..nh {
        for c in 0..n {
            a[(n + ng + k, c)] = -beta * point.mu[k] * jh[(k, c)];
        }
        a[(n + ng + k, n + ng + k)] = -beta * h[k];
    }
    a
}

pub(crate) fn penalty_for(graph: &ProblemGraph, x: &Vector, mu: &Vector, partial: bool) -> Matrix {
    let (jg, jh) = central_jacobians(graph, x);
    penalty_matrix(graph, &jg, &jh, mu, partial)
}

/// `D = blkdiag(0, I, I)`.
pub fn offset_jacobian(graph: &ProblemGraph) -> Matrix {
    let p = graph.p_dim();
    let mut d = Matrix::zeros(p, p);
    for k in graph.n()..p {
        d[(k, k)] = 1.0;
    }
    d
}

/// Jacobians of the stacked local KKT systems `F(y; p) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisMatrices {
    /// `∂F/∂y`: block-diagonal local Hessians (with `ρ`) and local Jacobians.
    pub m: Matrix,
    /// `N = ∂F/∂p + M D`; the central KKT Jacobian at a KKT point.
    pub n: Matrix,
    pub d: Matrix,
    /// `∂F/∂p = N - M D`.
    pub dfdp: Matrix,
}

impl AnalysisMatrices {
    /// `∇Φ = -M⁻¹ (N - M D)`.
    pub fn grad_phi(&self) -> Result<Matrix, AnalysisError> {
        let lu = self.m.clone().full_piv_lu();
        let sol = lu.solve(&self.dfdp).ok_or(AnalysisError::SingularM)?;
        Ok(-sol)
    }

    pub fn m_inv_n(&self) -> Result<Matrix, AnalysisError> {
        self.m
            .clone()
            .full_piv_lu()
            .solve(&self.n)
            .ok_or(AnalysisError::SingularM)
    }
}

/// Assembles `M`, `N` and `D` from the local solutions at `point`.
pub fn assemble_m_n_d(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    local: &[(LocalNlp, LocalSolution)],
) -> Result<AnalysisMatrices, AnalysisError> {
    use crate::ipm::SmoothNlp;
    let (n, ng) = (graph.n(), graph.n_g());
    let p = graph.p_dim();
    let mut m = Matrix::zeros(p, p);
    let mut g = Matrix::zeros(p, p);
    for (i, (nlp, y)) in local.iter().enumerate() {
        let xr = graph.x_range(i);
        let lr = graph.g_range(i).start + n..graph.g_range(i).end + n;
        let ur = graph.h_range(i).start + n + ng..graph.h_range(i).end + n + ng;
        let (ni, ngi, nhi) = (xr.len(), lr.len(), ur.len());

        let jg_own = nlp.eq_jacobian(&y.s);
        let jh_own = nlp.ineq_jacobian(&y.s);
        let hbar = nlp.inequalities(&y.s);
        m.view_mut((xr.start, xr.start), (ni, ni))
            .copy_from(&nlp.hessian(&y.s, &y.nu, &y.kappa));
        m.view_mut((xr.start, lr.start), (ni, ngi))
            .copy_from(&jg_own.transpose());
        m.view_mut((xr.start, ur.start), (ni, nhi))
            .copy_from(&jh_own.transpose());
        m.view_mut((lr.start, xr.start), (ngi, ni))
            .copy_from(&jg_own);
        for k in 0..nhi {
            for c in 0..ni {
                m[(ur.start + k, xr.start + c)] = y.kappa[k] * jh_own[(k, c)];
            }
            m[(ur.start + k, ur.start + k)] = hbar[k];
        }

        // Dependence on p through the frozen base point of agent i's own functions.
        let zbar = nlp.shifted_z(&y.s);
        let hess = local_lagrangian_hessian(nlp.oracle(), &zbar, &y.nu, &y.kappa);
        let jg_full = nlp.full_eq_jacobian(&y.s);
        let jh_full = nlp.full_ineq_jacobian(&y.s);
        for (k, off) in graph.z_layout(i) {
            let kr = graph.x_range(k);
            let nk = kr.len();
            let mut blk = g.view_mut((xr.start, kr.start), (ni, nk));
            blk += hess.view((0, off), (ni, nk));
            g.view_mut((lr.start, kr.start), (ngi, nk))
                .copy_from(&jg_full.view((0, off), (ngi, nk)));
            for r in 0..nhi {
                for c in 0..nk {
                    g[(ur.start + r, kr.start + c)] = y.kappa[r] * jh_full[(r, off + c)];
                }
            }
        }

        // Dependence through the sensitivity c_i = Σ_j ∇_{x_i} L_j.
        for &j in graph.neighbors(i) {
            let zj = graph.gather_z(j, &point.x);
            let sj = point.agent_slice(graph, j);
            let oracle = graph.agent(j).oracle.as_ref();
            let hj = local_lagrangian_hessian(oracle, &zj, &sj.lambda, &sj.mu);
            let off_i = graph.z_offset(j, i).expect("symmetric graph");
            for (k, off) in graph.z_layout(j) {
                let kr = graph.x_range(k);
                let mut blk = g.view_mut((xr.start, kr.start), (ni, kr.len()));
                blk += hj.view((off_i, off), (ni, kr.len()));
            }
            let (gj, hj_r) = (graph.g_range(j), graph.h_range(j));
            if !gj.is_empty() {
                let jac = oracle.equality_jacobian(&zj);
                let mut blk = g.view_mut((xr.start, n + gj.start), (ni, gj.len()));
                blk += jac.view((0, off_i), (gj.len(), ni)).transpose();
            }
            if !hj_r.is_empty() {
                let jac = oracle.inequality_jacobian(&zj);
                let mut blk = g.view_mut((xr.start, n + ng + hj_r.start), (ni, hj_r.len()));
                blk += jac.view((0, off_i), (hj_r.len(), ni)).transpose();
            }
        }
    }
    let d = offset_jacobian(graph);
    let nmat = &g + &m * &d;
    Ok(AnalysisMatrices {
        m,
        n: nmat,
        d,
        dfdp: g,
    })
}

/// Linearized iteration matrix: `I - αA` for the mixing variants and
/// `I - αM⁻¹N` for the identity and baseline updates.
pub fn iteration_matrix(
    variant: Variant,
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    mats: &AnalysisMatrices,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<Matrix, AnalysisError> {
    let p = graph.p_dim();
    let a = match variant {
        Variant::Plus => assemble_a(graph, point, beta, 0.0, false),
        Variant::Sosc => assemble_a(graph, point, beta, gamma, false),
        Variant::PartialSosc => assemble_a(graph, point, beta, gamma, true),
        Variant::Identity | Variant::Baseline => mats.m_inv_n()?,
    };
    Ok(Matrix::identity(p, p) - a * alpha)
}

/// Stacked mixing matrices `blkdiag_i P_i` in the central ordering.
pub fn stacked_mixing_matrix(
    graph: &ProblemGraph,
    local: &[(LocalNlp, LocalSolution)],
    beta: f64,
) -> Matrix {
    let p = graph.p_dim();
    let mut out = Matrix::zeros(p, p);
    for (i, (nlp, y)) in local.iter().enumerate() {
        let idx = PrimalDualPoint::agent_indices(graph, i);
        let pi = mixing_matrix(nlp, y, beta);
        for (r, &gr) in idx.iter().enumerate() {
            for (c, &gc) in idx.iter().enumerate() {
                out[(gr, gc)] = pi[(r, c)];
            }
        }
    }
    out
}

/// Left factor `[I, γJ_gᵀ, γJ_hᵀU; 0, -βI, 0; 0, 0, -βI]` with `γ = 0`
/// reducing to `blkdiag(I, -βI, -βI)`. `partial` keeps decoupled rows only.
pub fn sosc_factor(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    beta: f64,
    gamma: f64,
    partial: bool,
) -> Matrix {
    let (n, ng, nh) = (graph.n(), graph.n_g(), graph.n_h());
    let p = graph.p_dim();
    let mut f = Matrix::identity(p, p);
    for k in n..p {
        f[(k, k)] = -beta;
    }
    if gamma != 0.0 {
        let (mut jg, mut jh) = central_jacobians(graph, &point.x);
        if partial {
            let (gr, hr) = decoupled_rows(graph);
            for r in 0..ng {
                if !gr.contains(&r) {
                    jg.row_mut(r).fill(0.0);
                }
            }
            for r in 0..nh {
                if !hr.contains(&r) {
                    jh.row_mut(r).fill(0.0);
                }
            }
        }
        f.view_mut((0, n), (n, ng))
            .copy_from(&(jg.transpose() * gamma));
        let mut uj = jh.transpose() * gamma;
        for k in 0..nh {
            uj.column_mut(k).scale_mut(point.mu[k]);
        }
        f.view_mut((0, n + ng), (n, nh)).copy_from(&uj);
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GddMetric {
    pub norm: f64,
    pub spectral_radius: f64,
}

impl GddMetric {
    /// Plain sensitivity-based iteration is expected to converge.
    pub fn baseline_recommended(&self) -> bool {
        self.norm < 1.0
    }
}

/// `‖I - M⁻¹N‖₂` and `ρ(I - M⁻¹N)`.
pub fn gdd_metric(mats: &AnalysisMatrices) -> Result<GddMetric, AnalysisError> {
    let p = mats.m.nrows();
    let t = Matrix::identity(p, p) - mats.m_inv_n()?;
    Ok(GddMetric {
        norm: spectral_norm(&t),
        spectral_radius: spectral_radius(&t)?,
    })
}
