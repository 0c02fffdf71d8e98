use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::engine::{IterationTrace, Variant};
use crate::linalg::{max_abs, spectral_radius, Matrix};
use crate::local_nlp::{LocalSolution, ACTIVE_TAU};
use crate::model::{active_inequalities, PrimalDualPoint, ProblemGraph};

use super::assumptions::{check_assumptions, AssumptionReport};
use super::matrices::{
    assemble_m_n_d, gdd_metric, iteration_matrix, local_solutions_at, GddMetric,
};
use super::stability::{
    convergence_constants, max_step_size, p_norm, solve_discrete_lyapunov, RateConstants,
};
use super::tuning::{min_gamma, min_rho, tune_beta, BetaChoice};
use super::AnalysisError;

/// Lyapunov certificate of the linearized iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovData {
    pub p_bar: Matrix,
    pub q: Matrix,
    pub constants: RateConstants,
    /// Max-abs residual of `A_clᵀ P A_cl - P + Q`, relative to `max|P|`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCertificate {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub gamma: f64,
    /// Step-size bound from the eigenvalues of the analysed matrix.
    pub alpha_bar: Option<f64>,
    pub beta_rule: BetaChoice,
    pub rho_min: f64,
    pub gamma_bar: Option<Result<f64, AnalysisError>>,
    pub spectral_radius: f64,
    pub gdd: Option<GddMetric>,
    pub lyapunov: Result<LyapunovData, AnalysisError>,
    pub assumptions: AssumptionReport,
}

impl RateCertificate {
    /// Plain-text report of every constant.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| {
            v.map_or("none (divergent for every step size)".to_string(), |x| {
                format!("{x:.6}")
            })
        };
        let _ = writeln!(s, "variant               {}", self.variant);
        let _ = writeln!(s, "alpha                 {:.6}", self.alpha);
        let _ = writeln!(s, "beta                  {:.6}", self.beta);
        let _ = writeln!(s, "rho                   {:.6}", self.rho);
        let _ = writeln!(s, "gamma                 {:.6}", self.gamma);
        let _ = writeln!(s, "alpha_bar             {}", opt(self.alpha_bar));
        let _ = writeln!(
            s,
            "beta_rule             {:.6}{}",
            self.beta_rule.beta,
            if self.beta_rule.defaulted {
                " (default)"
            } else {
                ""
            }
        );
        let _ = writeln!(s, "rho_min               {:.6e}", self.rho_min);
        match &self.gamma_bar {
            Some(Ok(g)) => {
                let _ = writeln!(s, "gamma_bar             {g:.6}");
            }
            Some(Err(e)) => {
                let _ = writeln!(s, "gamma_bar             error: {e}");
            }
            None => {}
        }
        let _ = writeln!(s, "spectral_radius       {:.6}", self.spectral_radius);
        if let Some(g) = &self.gdd {
            let _ = writeln!(s, "gdd_norm              {:.6}", g.norm);
            let _ = writeln!(s, "gdd_spectral_radius   {:.6}", g.spectral_radius);
        }
        match &self.lyapunov {
            Ok(l) => {
                let _ = writeln!(s, "C                     {:.6}", l.constants.c);
                let _ = writeln!(s, "C0                    {:.6}", l.constants.c0);
                let _ = writeln!(s, "C1                    {:.6}", l.constants.c1);
                let _ = writeln!(s, "lyapunov_residual     {:.3e}", l.residual);
            }
            Err(e) => {
                let _ = writeln!(s, "lyapunov              error: {e}");
            }
        }
        let _ = writeln!(s, "assumptions:");
        let _ = write!(s, "{}", self.assumptions);
        s
    }
}

/// Linearized analysis at a KKT point `p_star` for the given parameters.
/// `q` is the right-hand side of the Lyapunov equation.
#[allow(clippy::too_many_arguments)]
pub fn certify_rate(
    graph: &ProblemGraph,
    p_star: &PrimalDualPoint,
    variant: Variant,
    alpha: f64,
    beta: f64,
    rho: f64,
    gamma: f64,
    q: &Matrix,
) -> Result<RateCertificate, AnalysisError> {
    let local = local_solutions_at(graph, p_star, rho, 1e-12, None)?;
    let mats = assemble_m_n_d(graph, p_star, &local)?;
    let a_cl = iteration_matrix(variant, graph, p_star, &mats, alpha, beta, gamma)?;
    let p = graph.p_dim();
    // The analysed matrix A with A_cl = I - αA.
    let a = (Matrix::identity(p, p) - &a_cl) / alpha;
    let bound = max_step_size(&a)?;
    let ys: Vec<LocalSolution> = local.iter().map(|(_, y)| y.clone()).collect();
    let partial = variant == Variant::PartialSosc;
    let beta_rule = tune_beta(
        graph,
        p_star,
        &ys,
        if variant == Variant::Plus { 0.0 } else { gamma },
        partial,
    );
    let gamma_bar = matches!(variant, Variant::Sosc | Variant::PartialSosc)
        .then(|| min_gamma(graph, p_star, partial, ACTIVE_TAU));
    let lyapunov = solve_discrete_lyapunov(&a_cl, q).and_then(|p_bar| {
        let residual =
            max_abs(&(a_cl.transpose() * &p_bar * &a_cl - &p_bar + q)) / max_abs(&p_bar).max(1.0);
        Ok(LyapunovData {
            constants: convergence_constants(&p_bar, q)?,
            p_bar,
            q: q.clone(),
            residual,
        })
    });
    Ok(RateCertificate {
        variant,
        alpha,
        beta,
        rho,
        gamma,
        alpha_bar: bound.alpha_bar,
        beta_rule,
        rho_min: min_rho(graph, p_star),
        gamma_bar,
        spectral_radius: spectral_radius(&a_cl)?,
        gdd: gdd_metric(&mats).ok(),
        lyapunov,
        assumptions: check_assumptions(graph, p_star, rho, ACTIVE_TAU),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinCertificate {
    pub active_sets_match: bool,
    pub lyapunov_decreasing: bool,
    pub locally_regular: bool,
    /// First iteration whose Euclidean error is at or below the plateau floor.
    pub plateau_iter: Option<usize>,
    pub notes: Vec<String>,
}

impl BasinCertificate {
    pub fn passed(&self) -> bool {
        self.active_sets_match && self.lyapunov_decreasing && self.locally_regular
    }
}

/// Constructive basin test along a completed run: every local active set
/// matches the active set at `p_star`, `V(Δp) = Δpᵀ P̄ Δp` strictly decreases
/// while `‖Δp‖` is above `floor`, and every local solution is regular.
pub fn certify_basin(
    graph: &ProblemGraph,
    trace: &IterationTrace,
    p_star: &PrimalDualPoint,
    p_bar: &Matrix,
    floor: f64,
) -> BasinCertificate {
    let reference: BTreeSet<usize> = active_inequalities(graph, &p_star.x, ACTIVE_TAU);
    let star = p_star.stacked();
    let mut cert = BasinCertificate {
        active_sets_match: true,
        lyapunov_decreasing: true,
        locally_regular: true,
        plateau_iter: None,
        notes: Vec::new(),
    };
    let mut prev = trace.initial.stacked() - &star;
    if prev.norm() <= floor {
        cert.plateau_iter = Some(0);
    }
    for rec in &trace.records {
        let found: BTreeSet<usize> = rec
            .local
            .iter()
            .flat_map(|y| y.active_set.iter().copied())
            .collect();
        if found != reference && cert.active_sets_match {
            cert.active_sets_match = false;
            cert.notes.push(format!(
                "iteration {}: active set {:?} differs from {:?}",
                rec.iter, found, reference
            ));
        }
        if let Some(y) = rec.local.iter().find(|y| !y.regularity.holds()) {
            if cert.locally_regular {
                cert.locally_regular = false;
                cert.notes.push(format!(
                    "iteration {}: local regularity fails ({:?})",
                    rec.iter, y.regularity
                ));
            }
        }
        let cur = rec.point.stacked() - &star;
        if cert.plateau_iter.is_none() {
            let (v_prev, v_cur) = (p_norm(&prev, p_bar), p_norm(&cur, p_bar));
            if v_cur.partial_cmp(&v_prev) != Some(std::cmp::Ordering::Less)
                && cert.lyapunov_decreasing
            {
                cert.lyapunov_decreasing = false;
                cert.notes.push(format!(
                    "iteration {}: V does not decrease ({:.3e} -> {:.3e})",
                    rec.iter, v_prev, v_cur
                ));
            }
            if cur.norm() <= floor {
                cert.plateau_iter = Some(rec.iter);
            }
        }
        prev = cur;
    }
    cert
}

/// Compares central differences of the local-solution map `Φ(p)` (all local
/// subproblems re-solved to `1e-12`) with `-M⁻¹(N - MD)`; returns the max
/// error relative to `max(1, max|∇Φ|)`.
pub fn grad_phi_check(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    rho: f64,
    h: f64,
) -> Result<f64, AnalysisError> {
    let tol = 1e-12;
    let base = local_solutions_at(graph, point, rho, tol, None)?;
    let mats = assemble_m_n_d(graph, point, &base)?;
    let closed = mats.grad_phi()?;
    let base_y: Vec<LocalSolution> = base.iter().map(|(_, y)| y.clone()).collect();
    let active = |sols: &[(crate::local_nlp::LocalNlp, LocalSolution)]| -> Vec<Vec<usize>> {
        sols.iter().map(|(_, y)| y.active_set.clone()).collect()
    };
    let base_active = active(&base);
    let stack = |sols: &[(crate::local_nlp::LocalNlp, LocalSolution)]| {
        let mut y = PrimalDualPoint::zeros(graph);
        for (i, (_, s)) in sols.iter().enumerate() {
            y.set_agent_slice(
                graph,
                i,
                &crate::model::AgentSlice {
                    x: s.s.clone(),
                    lambda: s.nu.clone(),
                    mu: s.kappa.clone(),
                },
            );
        }
        y.stacked()
    };
    let p0 = point.stacked();
    let mut fd = Matrix::zeros(p0.len(), p0.len());
    for k in 0..p0.len() {
        let mut cols = Vec::with_capacity(2);
        for sign in [1.0, -1.0] {
            let mut pk = p0.clone();
            pk[k] += sign * h;
            let pt = PrimalDualPoint::from_stacked(graph, &pk)?;
            let sols = local_solutions_at(graph, &pt, rho, tol, Some(&base_y))?;
            if active(&sols) != base_active {
                return Err(AnalysisError::ActiveSetChanged { coordinate: k });
            }
            cols.push(stack(&sols));
        }
        fd.set_column(k, &((&cols[0] - &cols[1]) / (2.0 * h)));
    }
    Ok(max_abs(&(&fd - &closed)) / max_abs(&closed).max(1.0))
}
