use approx::assert_relative_eq;
use nalgebra::DMatrix;
use sbdp_core::analysis::{
    assemble_a, assemble_m_n_d, certify_basin, certify_rate, check_assumptions, grad_phi_check,
    local_solutions_at, max_step_size, min_rho, offset_jacobian, sosc_factor,
    stacked_mixing_matrix, tune_beta,
};
use sbdp_core::central::solve_central;
use sbdp_core::engine::{run, EngineConfig, TraceStatus, Variant};
use sbdp_core::linalg::{max_abs, Vector};
use sbdp_core::local_nlp::ACTIVE_TAU;
use sbdp_core::model::{PrimalDualPoint, ProblemGraph};
use sbdp_core::netsim::{verify_budget, NetworkSim};
use sbdp_core::problems::{nlp61, nlp61_initial_point};

fn optimum(g: &ProblemGraph) -> PrimalDualPoint {
    solve_central(g, &Vector::from_vec(vec![1.4, 1.4]), 1e-13).unwrap()
}

fn reference_config() -> EngineConfig {
    EngineConfig {
        alpha: 0.35,
        beta: 2.0,
        rho: 0.0,
        epsilon: 1e-10,
        max_iter: 200,
        ..EngineConfig::default()
    }
}

#[test]
fn run_reaches_printed_optimum() {
    let g = nlp61().unwrap();
    let mut net = NetworkSim::new(&g);
    let trace = run(&g, &reference_config(), &nlp61_initial_point(&g), &mut net).unwrap();
    assert_eq!(trace.status, TraceStatus::Converged);
    let p = trace.final_point();
    assert!(
        (p.x[0] - 0.82).abs() <= 5e-3 && (p.x[1] - 1.84).abs() <= 5e-3,
        "{p:?}"
    );
    assert!(
        p.mu[0].abs() <= 5e-3 && (p.mu[1] - 0.4).abs() <= 5e-3,
        "{p:?}"
    );
    let star = optimum(&g).stacked();
    assert!((p.stacked() - star).amax() < 1e-7);
    for rec in &trace.records {
        assert!(verify_budget(&rec.comm, &g, trace.mode));
        assert_eq!(rec.comm.total_floats(), 4);
    }
}

#[test]
fn step_bound_and_local_convexity() {
    let g = nlp61().unwrap();
    let star = optimum(&g);
    let a = assemble_a(&g, &star, 2.0, 0.0, false);
    let bound = max_step_size(&a).unwrap();
    assert_relative_eq!(bound.alpha_bar.unwrap(), 0.4, epsilon = 1e-6);
    assert_eq!(min_rho(&g, &star), 0.0);
    let report = check_assumptions(&g, &star, 0.0, ACTIVE_TAU);
    for name in [
        "strict_complementarity",
        "licq",
        "uniform_sosc",
        "local_convexity",
        "local_licq",
    ] {
        assert!(report.passed(name), "{name}: {report}");
    }
}

#[test]
fn mixing_matrix_factorization_at_optimum() {
    let g = nlp61().unwrap();
    let star = optimum(&g);
    let local = local_solutions_at(&g, &star, 0.0, 1e-12, None).unwrap();
    for (_, y) in &local {
        assert!(y.s.amax() < 1e-9);
    }
    let mats = assemble_m_n_d(&g, &star, &local).unwrap();
    let stacked = stacked_mixing_matrix(&g, &local, 2.0);
    let factored = sosc_factor(&g, &star, 2.0, 0.0, false) * &mats.m;
    assert!(max_abs(&(&stacked - &factored)) <= 1e-8 * max_abs(&stacked).max(1.0));
    // Top-left block equals L(p*) = [4, μ2; μ2, 2].
    assert_relative_eq!(stacked[(0, 0)], 4.0, epsilon = 1e-8);
    assert_relative_eq!(stacked[(1, 1)], 2.0, epsilon = 1e-8);
    assert_eq!(stacked[(0, 1)], 0.0);
    let l = mats.n.view((0, 0), (2, 2)).into_owned();
    assert_relative_eq!(l[(0, 1)], star.mu[1], epsilon = 1e-8);
    assert_eq!(mats.d, offset_jacobian(&g));
}

#[test]
fn sensitivity_of_local_solution_map() {
    let g = nlp61().unwrap();
    let star = optimum(&g);
    let err = grad_phi_check(&g, &star, 0.0, 1e-5).unwrap();
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn published_constants_report() {
    let g = nlp61().unwrap();
    let star = optimum(&g);
    let cert = certify_rate(
        &g,
        &star,
        Variant::Plus,
        0.35,
        2.0,
        0.0,
        0.0,
        &DMatrix::identity(4, 4),
    )
    .unwrap();
    let lyap = cert.lyapunov.as_ref().unwrap();
    println!("{}", cert.report());
    assert!(lyap.residual <= 1e-8);
    assert_relative_eq!(lyap.constants.c0, 2.07, epsilon = 0.05);
    assert_relative_eq!(lyap.constants.c1, 0.88, epsilon = 0.05);
    let local = local_solutions_at(&g, &star, 0.0, 1e-12, None).unwrap();
    let ys: Vec<_> = local.into_iter().map(|(_, y)| y).collect();
    let beta = tune_beta(&g, &star, &ys, 0.0, false);
    assert!(beta.beta > 0.0 && !beta.defaulted);

    let mut net = NetworkSim::new(&g);
    let trace = run(&g, &reference_config(), &nlp61_initial_point(&g), &mut net).unwrap();
    let basin = certify_basin(&g, &trace, &star, &lyap.p_bar, 1e-7);
    assert!(basin.passed(), "{basin:?}");
}
