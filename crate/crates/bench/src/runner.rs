//! Scenario execution: reference optimum, parameter resolution, engine run,
//! certificate, and the artifacts written to the output directory.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sbdp_core::analysis::{
    assemble_m_n_d, certify_basin, certify_rate, iteration_matrix, local_solutions_at,
    max_step_size, p_norm, tune_beta, AnalysisError, BasinCertificate, LyapunovData,
    RateCertificate,
};
use sbdp_core::central::solve_central;
use sbdp_core::ipm::IpmError;
use sbdp_core::model::{central_kkt_residual, finite_difference_audit, AuditReport};
use sbdp_core::problems::{example31, example51, nlp61};
use sbdp_core::{
    run, EngineConfig, EngineError, IterationTrace, NetworkSim, PrimalDualPoint, ProblemGraph,
    TraceStatus, Variant, Vector,
};
use thiserror::Error;

use crate::admm::{admm_logreg, AdmmConfig, AdmmError, AdmmTrace};
use crate::logreg::{build_graph, generate, LogregData, LogregError};
use crate::scenario::{Param, ProblemSpec, Scenario, ScenarioError};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error("reference solve failed: {0}")]
    Reference(IpmError),
    #[error("analysis failed: {0}")]
    Analysis(#[from] AnalysisError),
    #[error(
        "no stable step size: the analysed matrix has an eigenvalue with nonpositive real part"
    )]
    NoStepSize,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) | RunError::Problem(_) | RunError::Io { .. } => EXIT_USAGE,
            RunError::Engine(EngineError::Config(_)) => EXIT_USAGE,
            _ => EXIT_SOLVER,
        }
    }
}

impl From<LogregError> for RunError {
    fn from(e: LogregError) -> Self {
        RunError::Problem(e.to_string())
    }
}

pub fn status_exit_code(status: TraceStatus) -> i32 {
    match status {
        TraceStatus::Converged => EXIT_CONVERGED,
        TraceStatus::MaxIterations | TraceStatus::Diverged => EXIT_NOT_CONVERGED,
    }
}

/// Problem instance with its start point and centralized reference optimum.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: ProblemGraph,
    pub p0: PrimalDualPoint,
    pub star: PrimalDualPoint,
    pub data: Option<LogregData>,
}

pub fn build_problem(spec: &ProblemSpec) -> Result<(ProblemGraph, Option<LogregData>), RunError> {
    let model = |r: Result<ProblemGraph, sbdp_core::ModelError>| {
        r.map_err(|e| RunError::Problem(e.to_string()))
    };
    Ok(match spec {
        ProblemSpec::Nlp61 => (model(nlp61())?, None),
        ProblemSpec::Example31 { a, with_g2 } => (model(example31(*a, *with_g2))?, None),
        ProblemSpec::Example51 => (model(example51())?, None),
        ProblemSpec::Logreg(params) => {
            let data = generate(params)?;
            (build_graph(&data)?, Some(data))
        }
    })
}

fn default_x0(spec: &ProblemSpec, n: usize) -> Vec<f64> {
    match spec {
        ProblemSpec::Nlp61 => vec![1.4, 1.4],
        ProblemSpec::Example31 { .. } => vec![1.0, 1.0],
        ProblemSpec::Example51 => vec![0.5, -0.3],
        ProblemSpec::Logreg(_) => vec![0.0; n],
    }
}

pub fn prepare(s: &Scenario) -> Result<Prepared, RunError> {
    let (graph, data) = build_problem(&s.problem)?;
    let graph = graph.with_neighbor_affine(s.neighbor_affine);
    let x0 =
        s.x0.clone()
            .unwrap_or_else(|| default_x0(&s.problem, graph.n()));
    if x0.len() != graph.n() {
        return Err(RunError::Problem(format!(
            "x0 has {} entries, problem has {} variables",
            x0.len(),
            graph.n()
        )));
    }
    let mut p0 = PrimalDualPoint::zeros(&graph);
    p0.x.copy_from_slice(&x0);
    let star = solve_central(&graph, &p0.x, 1e-10).map_err(RunError::Reference)?;
    Ok(Prepared {
        graph,
        p0,
        star,
        data,
    })
}

fn partial(v: Variant) -> bool {
    v == Variant::PartialSosc
}

fn penalised(v: Variant) -> bool {
    matches!(v, Variant::Sosc | Variant::PartialSosc)
}

/// Engine configuration with `auto` step sizes resolved at the reference optimum:
/// `β` by the curvature rule and `α = min(0.9 ᾱ, 0.95)`.
pub fn resolve_config(s: &Scenario, prep: &Prepared) -> Result<EngineConfig, RunError> {
    let gamma = if penalised(s.variant) { s.gamma } else { 0.0 };
    let beta = match s.beta {
        Param::Fixed(b) => b,
        Param::Auto => {
            let local = local_solutions_at(&prep.graph, &prep.star, s.rho, 1e-12, None)
                .map_err(AnalysisError::from)?;
            let ys: Vec<_> = local.into_iter().map(|(_, y)| y).collect();
            tune_beta(&prep.graph, &prep.star, &ys, gamma, partial(s.variant)).beta
        }
    };
    let alpha = match s.alpha {
        Param::Fixed(a) => a,
        Param::Auto => {
            let local = local_solutions_at(&prep.graph, &prep.star, s.rho, 1e-12, None)
                .map_err(AnalysisError::from)?;
            let mats = assemble_m_n_d(&prep.graph, &prep.star, &local)?;
            let a_cl = iteration_matrix(
                s.variant,
                &prep.graph,
                &prep.star,
                &mats,
                1.0,
                beta,
                s.gamma,
            )?;
            let p = prep.graph.p_dim();
            let a = DMatrix::identity(p, p) - a_cl;
            let bar = max_step_size(&a)?.alpha_bar.ok_or(RunError::NoStepSize)?;
            (0.9 * bar).min(0.95)
        }
    };
    let cfg = EngineConfig {
        alpha,
        beta,
        rho: s.rho,
        gamma: s.gamma,
        epsilon: s.eps,
        max_iter: s.max_iter,
        variant: s.variant,
        local_tol: s.local_tol,
        timing: s.timing,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn certificate(prep: &Prepared, cfg: &EngineConfig) -> Result<RateCertificate, RunError> {
    let p = prep.graph.p_dim();
    Ok(certify_rate(
        &prep.graph,
        &prep.star,
        cfg.variant,
        cfg.alpha,
        cfg.beta,
        cfg.rho,
        cfg.gamma,
        &DMatrix::identity(p, p),
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub err2: f64,
    pub err_p: Option<f64>,
    pub bound_cq: Option<f64>,
    pub lyapunov_v: Option<f64>,
    pub s_inf: Option<f64>,
    pub comm_floats: usize,
    pub wall_ms: f64,
}

pub const TRACE_HEADER: &str = "iter,err2,errP,bound_Cq,lyapunov_V,s_inf,comm_floats,wall_ms";

/// One row per point `p^0, p^1, ...`; the P-weighted columns need a Lyapunov pair.
pub fn trace_rows(
    trace: &IterationTrace,
    star: &PrimalDualPoint,
    lyap: Option<&LyapunovData>,
) -> Vec<TraceRow> {
    let star = star.stacked();
    let delta = |p: &PrimalDualPoint| p.stacked() - &star;
    let d0 = delta(&trace.initial);
    let e0 = lyap.map(|l| p_norm(&d0, &l.p_bar));
    let mut rows = Vec::with_capacity(trace.records.len() + 1);
    let row = |iter: usize, d: &Vector, s_inf, comm_floats, wall_ms| {
        let err_p = lyap.map(|l| p_norm(d, &l.p_bar));
        TraceRow {
            iter,
            err2: d.norm(),
            err_p,
            bound_cq: lyap
                .zip(e0)
                .map(|(l, e)| l.constants.c.powi(iter as i32) * e),
            lyapunov_v: err_p.map(|e| e * e),
            s_inf,
            comm_floats,
            wall_ms,
        }
    };
    let init_floats = trace
        .ledger
        .iterations
        .first()
        .map_or(0, |c| c.total_floats());
    rows.push(row(0, &d0, None, init_floats, 0.0));
    for rec in &trace.records {
        rows.push(row(
            rec.iter,
            &delta(&rec.point),
            Some(rec.s_inf),
            rec.comm.total_floats(),
            rec.wall_ms,
        ));
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{},{},{},{},{},{:e}",
            r.iter,
            r.err2,
            opt(r.err_p),
            opt(r.bound_cq),
            opt(r.lyapunov_v),
            opt(r.s_inf),
            r.comm_floats,
            r.wall_ms
        )?;
    }
    Ok(())
}

pub fn write_admm_csv(trace: &AdmmTrace, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "iter,err2")?;
    for (q, e) in trace.errors.iter().enumerate() {
        writeln!(out, "{q},{e:e}")?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub status: TraceStatus,
    pub exit_code: i32,
    pub config: EngineConfig,
    pub trace: IterationTrace,
    pub rows: Vec<TraceRow>,
    pub certificate: Option<Result<RateCertificate, String>>,
    pub basin: Option<BasinCertificate>,
    pub admm: Option<AdmmTrace>,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn header(s: &Scenario, prep: &Prepared, cfg: &EngineConfig) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "scenario              {}", s.name);
    let _ = writeln!(t, "problem               {}", s.problem.name());
    let _ = writeln!(t, "agents                {}", prep.graph.num_agents());
    let _ = writeln!(t, "primal-dual size      {}", prep.graph.p_dim());
    let _ = writeln!(
        t,
        "reference residual    {:.3e}",
        central_kkt_residual(&prep.graph, &prep.star)
    );
    if prep.graph.n() <= 8 {
        let _ = writeln!(t, "reference x           {:?}", prep.star.x.as_slice());
        let _ = writeln!(t, "reference lambda      {:?}", prep.star.lambda.as_slice());
        let _ = writeln!(t, "reference mu          {:?}", prep.star.mu.as_slice());
    }
    let _ = writeln!(
        t,
        "config                variant={} alpha={} beta={} rho={} gamma={} eps={:e} max_iter={}",
        cfg.variant, cfg.alpha, cfg.beta, cfg.rho, cfg.gamma, cfg.epsilon, cfg.max_iter
    );
    t
}

/// Linearized analysis only; returns the report text.
pub fn analyze(s: &Scenario) -> Result<(String, RateCertificate), RunError> {
    let prep = prepare(s)?;
    let cfg = resolve_config(s, &prep)?;
    let cert = certificate(&prep, &cfg)?;
    Ok((format!("{}{}", header(s, &prep, &cfg), cert.report()), cert))
}

/// Derivative audit at the start point and at the reference optimum.
pub fn audit(s: &Scenario) -> Result<(String, bool), RunError> {
    let prep = prepare(s)?;
    let mut text = String::new();
    let mut ok = true;
    let tol = 1e-5;
    for (label, point) in [("start", &prep.p0), ("optimum", &prep.star)] {
        let report: AuditReport = finite_difference_audit(&prep.graph, point, 1e-6);
        ok &= report.passes(tol);
        let _ = writeln!(
            text,
            "{label}: max relative error {:.3e}",
            report.max_error()
        );
        for e in &report.entries {
            let _ = writeln!(
                text,
                "  agent {:<3} {:<22} {:.3e}",
                e.agent, e.oracle, e.max_rel_error
            );
        }
    }
    let _ = writeln!(text, "audit {}", if ok { "passed" } else { "FAILED" });
    Ok((text, ok))
}

/// Runs the scenario and writes `<name>_trace.csv`, `<name>_certificate.txt`,
/// and, when enabled, `<name>_messages.tsv` and `<name>_admm.csv` under `out_dir`.
pub fn run_scenario(s: &Scenario, out_dir: &Path) -> Result<RunReport, RunError> {
    std::fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    let prep = prepare(s)?;
    let cfg = resolve_config(s, &prep)?;
    let certificate = s
        .certify
        .then(|| certificate(&prep, &cfg).map_err(|e| e.to_string()));
    let lyap = match &certificate {
        Some(Ok(c)) => c.lyapunov.as_ref().ok(),
        _ => None,
    };

    let mut net = NetworkSim::new(&prep.graph).with_log(s.log_messages);
    let trace = run(&prep.graph, &cfg, &prep.p0, &mut net)?;
    let rows = trace_rows(&trace, &prep.star, lyap);
    let basin = lyap.map(|l| certify_basin(&prep.graph, &trace, &prep.star, &l.p_bar, 1e-7));

    let admm = match (&prep.data, s.admm_penalty) {
        (Some(data), Some(penalty)) => Some(admm_logreg(
            data,
            &prep.star.x,
            &AdmmConfig {
                penalty,
                tol: 1e-9,
                max_iter: s.admm_max_iter,
            },
        )?),
        _ => None,
    };

    let mut files = Vec::new();
    let trace_path = out_dir.join(format!("{}_trace.csv", s.name));
    let mut w = create(&trace_path)?;
    write_trace_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(io_at(&trace_path))?;
    files.push(trace_path);

    if s.log_messages {
        let path = out_dir.join(format!("{}_messages.tsv", s.name));
        let mut w = create(&path)?;
        net.write_log(&mut w)
            .and_then(|_| w.flush())
            .map_err(io_at(&path))?;
        files.push(path);
    }
    if let Some(a) = &admm {
        let path = out_dir.join(format!("{}_admm.csv", s.name));
        let mut w = create(&path)?;
        write_admm_csv(a, &mut w)
            .and_then(|_| w.flush())
            .map_err(io_at(&path))?;
        files.push(path);
    }

    let last = rows.last().map_or(f64::NAN, |r| r.err2);
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "run                   status={:?} iterations={} final_err2={:.3e}",
        trace.status,
        trace.records.len(),
        last
    );
    if let Some(r) = trace.records.first() {
        let _ = writeln!(summary, "floats_per_iteration  {}", r.comm.total_floats());
    }
    if let Some(b) = &basin {
        let _ = writeln!(
            summary,
            "basin                 {} (plateau at {:?})",
            if b.passed() {
                "certified"
            } else {
                "not certified"
            },
            b.plateau_iter
        );
        for n in &b.notes {
            let _ = writeln!(summary, "  {n}");
        }
    }
    if let Some(a) = &admm {
        let _ = writeln!(
            summary,
            "admm                  iterations={} final_err2={:.3e} first_below_1e-5={:?}",
            a.errors.len() - 1,
            a.errors.last().copied().unwrap_or(f64::NAN),
            a.first_below(1e-5)
        );
    }
    let mut text = header(s, &prep, &cfg);
    match &certificate {
        Some(Ok(c)) => text.push_str(&c.report()),
        Some(Err(e)) => {
            let _ = writeln!(text, "certificate           error: {e}");
        }
        None => {}
    }
    text.push_str(&summary);
    let cert_path = out_dir.join(format!("{}_certificate.txt", s.name));
    std::fs::write(&cert_path, &text).map_err(io_at(&cert_path))?;
    files.push(cert_path);

    Ok(RunReport {
        status: trace.status,
        exit_code: status_exit_code(trace.status),
        config: cfg,
        trace,
        rows,
        certificate,
        basin,
        admm,
        files,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_leaves_missing_columns_empty() {
        let rows = vec![TraceRow {
            iter: 0,
            err2: 0.5,
            err_p: None,
            bound_cq: None,
            lyapunov_v: None,
            s_inf: None,
            comm_floats: 4,
            wall_ms: 0.0,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{TRACE_HEADER}\n0,5e-1,,,,,4,0e0\n"));
    }

    #[test]
    fn auto_parameters_on_coupled_equalities() {
        let s = Scenario::load("example31").unwrap();
        let prep = prepare(&s).unwrap();
        let cfg = resolve_config(&s, &prep).unwrap();
        assert!(cfg.beta > 0.0 && cfg.beta < 1.0);
        assert!(cfg.alpha > 0.0 && cfg.alpha <= 0.95);
    }

    #[test]
    fn rejects_wrong_start_length() {
        let mut s = Scenario::load("nlp61_default").unwrap();
        s.x0 = Some(vec![1.0]);
        let err = prepare(&s).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn no_step_size_for_indefinite_plus() {
        let mut s = Scenario::load("example51").unwrap();
        s.variant = Variant::Plus;
        s.alpha = Param::Auto;
        let prep = prepare(&s).unwrap();
        assert!(matches!(
            resolve_config(&s, &prep),
            Err(RunError::NoStepSize)
        ));
    }
}
