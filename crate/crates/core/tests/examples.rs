use approx::assert_relative_eq;
use nalgebra::Complex;
use sbdp_core::analysis::{
    assemble_a, assemble_m_n_d, certify_basin, check_assumptions, gdd_metric, grad_phi_check,
    iteration_matrix, local_solutions_at, max_step_size, min_gamma, solve_discrete_lyapunov,
    sosc_factor, stacked_mixing_matrix, tune_beta, AnalysisError,
};
use sbdp_core::central::solve_central;
use sbdp_core::engine::{
    correction_matrix, run, EngineConfig, IterationTrace, TraceStatus, Variant,
};
use sbdp_core::linalg::{eigenvalues, max_abs, spectral_radius, Matrix, Vector};
use sbdp_core::local_nlp::ACTIVE_TAU;
use sbdp_core::model::{PrimalDualPoint, ProblemGraph};
use sbdp_core::netsim::NetworkSim;
use sbdp_core::problems::{example31, example51};

fn start(g: &ProblemGraph, x: &[f64]) -> PrimalDualPoint {
    let mut p = PrimalDualPoint::zeros(g);
    p.x.copy_from_slice(x);
    p
}

fn run_with(g: &ProblemGraph, cfg: EngineConfig, p0: &PrimalDualPoint) -> IterationTrace {
    let mut net = NetworkSim::new(g);
    run(g, &cfg, p0, &mut net).unwrap()
}

fn baseline(alpha: f64) -> EngineConfig {
    EngineConfig {
        alpha,
        variant: Variant::Baseline,
        rho: 0.0,
        epsilon: 1e-10,
        max_iter: 300,
        ..EngineConfig::default()
    }
}

fn sorted(mut ev: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
    ev.sort_by(|a, b| {
        a.im.partial_cmp(&b.im)
            .unwrap()
            .then(a.re.partial_cmp(&b.re).unwrap())
    });
    ev
}

fn recursion_matrix(a: f64, with_g2: bool, alpha: f64) -> Matrix {
    let g = example31(a, with_g2).unwrap();
    let star = PrimalDualPoint::zeros(&g);
    let local = local_solutions_at(&g, &star, 0.0, 1e-12, None).unwrap();
    let mats = assemble_m_n_d(&g, &star, &local).unwrap();
    iteration_matrix(Variant::Baseline, &g, &star, &mats, alpha, 1.0, 0.0).unwrap()
}

#[test]
fn example31_recursion_eigenvalues() {
    for a in [0.3, 0.5, 0.9, 1.1, 2.0, 4.0] {
        let ev = sorted(eigenvalues(&recursion_matrix(a, false, 1.0)).unwrap());
        let expected = [
            Complex::new(0.0, -a),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, a),
        ];
        for (got, want) in ev.iter().zip(expected) {
            assert!((got - want).norm() <= 1e-12, "a = {a}: {ev:?}");
        }
    }
}

#[test]
fn example31_with_g2_damped_eigenvalues() {
    for alpha in [0.1, 0.5, 0.9] {
        let m = recursion_matrix(4.0, true, alpha);
        let mut re: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        let mut want = vec![1.0 + alpha, 1.0 - 3.0 * alpha];
        want.sort_by(f64::total_cmp);
        assert_eq!(re.len(), 4);
        for w in want {
            // Each eigenvalue is defective, so the computed pair splits by about sqrt(eps).
            assert!(
                re.iter().any(|r| (r - w).abs() <= 1e-6),
                "alpha {alpha}: {re:?}"
            );
        }
        assert!(spectral_radius(&m).unwrap() > 1.0);
    }
}

#[test]
fn example31_baseline_dichotomy() {
    for (a, converges) in [(0.3, true), (0.9, true), (1.1, false), (4.0, false)] {
        let g = example31(a, false).unwrap();
        let trace = run_with(&g, baseline(1.0), &start(&g, &[1.0, 1.0]));
        let err = trace.final_point().stacked().amax();
        if converges {
            assert_eq!(trace.status, TraceStatus::Converged, "a = {a}");
            assert!(err <= 1e-8, "a = {a}: {err}");
        } else {
            assert!(
                trace.status != TraceStatus::Converged && err > 1.0,
                "a = {a}: {err}"
            );
        }
        let star = PrimalDualPoint::zeros(&g);
        let local = local_solutions_at(&g, &star, 0.0, 1e-12, None).unwrap();
        let gdd = gdd_metric(&assemble_m_n_d(&g, &star, &local).unwrap()).unwrap();
        assert_relative_eq!(gdd.spectral_radius, a, epsilon = 1e-9);
    }
}

#[test]
fn example31_with_g2_needs_the_mixing_matrix() {
    let g = example31(4.0, true).unwrap();
    let p0 = start(&g, &[1.0, 1.0]);
    for alpha in [0.1, 0.5, 0.9] {
        let trace = run_with(&g, baseline(alpha), &p0);
        assert!(trace.status != TraceStatus::Converged, "alpha {alpha}");
    }

    let star = solve_central(&g, &Vector::from_vec(vec![1.0, 1.0]), 1e-12).unwrap();
    assert!(star.stacked().amax() < 1e-9);
    let local = local_solutions_at(&g, &star, 0.0, 1e-12, None).unwrap();
    let ys: Vec<_> = local.iter().map(|(_, y)| y.clone()).collect();
    let beta = tune_beta(&g, &star, &ys, 0.0, false).beta;
    let bound = max_step_size(&assemble_a(&g, &star, beta, 0.0, false)).unwrap();
    let alpha = (0.9 * bound.alpha_bar.unwrap()).min(0.95);
    let cfg = EngineConfig {
        alpha,
        beta,
        rho: 0.0,
        epsilon: 1e-12,
        max_iter: 5000,
        ..EngineConfig::default()
    };
    let trace = run_with(&g, cfg, &p0);
    assert_eq!(trace.status, TraceStatus::Converged);
    assert!((trace.final_point().stacked() - star.stacked()).amax() <= 1e-6);

    let baseline_trace = run_with(&g, baseline(0.5), &p0);
    let mats = assemble_m_n_d(&g, &star, &local).unwrap();
    let a_cl = iteration_matrix(Variant::Plus, &g, &star, &mats, alpha, beta, 0.0).unwrap();
    let p_bar = solve_discrete_lyapunov(&a_cl, &Matrix::identity(4, 4)).unwrap();
    assert!(!certify_basin(&g, &baseline_trace, &star, &p_bar, 1e-7).lyapunov_decreasing);
}

#[test]
fn example31_grad_phi_is_exact() {
    let g = example31(0.7, true).unwrap();
    let mut p = start(&g, &[0.3, -0.2]);
    p.lambda.copy_from_slice(&[0.1, -0.4]);
    assert!(grad_phi_check(&g, &p, 0.0, 1e-4).unwrap() <= 1e-6);
}

#[test]
fn example51_eigenvalues_match_closed_form() {
    let g = example51().unwrap();
    let star = PrimalDualPoint::zeros(&g);
    for beta in [0.1, 1.0, 10.0] {
        let a = assemble_a(&g, &star, beta, 0.0, false);
        let expected =
            Matrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, -1.0, -beta, beta, 0.0]);
        assert!(max_abs(&(&a - &expected)) <= 1e-12);
        let root = Complex::new(1.0 - 8.0 * beta, 0.0).sqrt() * 0.5;
        let want = sorted(vec![
            Complex::new(1.0, 0.0),
            Complex::new(-0.5, 0.0) + root,
            Complex::new(-0.5, 0.0) - root,
        ]);
        let got = sorted(eigenvalues(&a).unwrap());
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).norm() <= 1e-10, "beta {beta}: {got:?} vs {want:?}");
        }
        assert_eq!(got.iter().filter(|z| z.re < 0.0).count(), 2);
        assert!(max_step_size(&a).unwrap().alpha_bar.is_none());

        for gamma in [0.25, 1.0, 2.0] {
            let a = assemble_a(&g, &star, beta, gamma, false);
            let d = Complex::new(4.0 * gamma * (gamma - 1.0) - 8.0 * beta + 1.0, 0.0).sqrt() * 0.5;
            let c = Complex::new(gamma - 0.5, 0.0);
            let want = sorted(vec![Complex::new(1.0, 0.0), c + d, c - d]);
            let got = sorted(eigenvalues(&a).unwrap());
            for (x, y) in got.iter().zip(&want) {
                assert!(
                    (x - y).norm() <= 1e-10,
                    "gamma {gamma}: {got:?} vs {want:?}"
                );
            }
        }
    }
}

#[test]
fn example51_penalty_bound_and_assumptions() {
    let g = example51().unwrap();
    let star = PrimalDualPoint::zeros(&g);
    assert_relative_eq!(
        min_gamma(&g, &star, false, ACTIVE_TAU).unwrap(),
        0.5,
        epsilon = 1e-3
    );
    assert!(matches!(
        min_gamma(&g, &star, true, ACTIVE_TAU),
        Err(AnalysisError::NoGamma { .. })
    ));
    let report = check_assumptions(&g, &star, 1.0, ACTIVE_TAU);
    assert!(!report.passed("uniform_sosc"));
    assert!(report.passed("sosc"));
    assert!(report.passed("licq"));
}

#[test]
fn example51_correction_blocks() {
    let g = example51().unwrap();
    let star = PrimalDualPoint::zeros(&g);
    let local = local_solutions_at(&g, &star, 1.0, 1e-12, None).unwrap();
    let s = |i: usize, j: usize| {
        correction_matrix(&g, i, &local[j].0, &local[j].1, false).unwrap()[(0, 0)]
    };
    assert_eq!(s(0, 0), 1.0);
    assert_eq!(s(1, 0), -1.0);
    assert_eq!(s(0, 1), 0.0);
    assert_eq!(s(1, 1), 0.0);
}

#[test]
fn example51_sosc_converges_where_plus_diverges() {
    let g = example51().unwrap();
    let p0 = start(&g, &[0.5, -0.3]);
    let plus = EngineConfig {
        alpha: 0.5,
        beta: 0.1,
        rho: 1.0,
        epsilon: 1e-12,
        max_iter: 200,
        ..EngineConfig::default()
    };
    let trace = run_with(&g, plus, &p0);
    let worst = trace
        .points()
        .map(|p| p.stacked().amax())
        .fold(0.0, f64::max);
    assert!(worst > 1e3, "{worst}");

    let sosc = EngineConfig {
        variant: Variant::Sosc,
        gamma: 1.0,
        max_iter: 2000,
        ..plus
    };
    let trace = run_with(&g, sosc, &p0);
    assert_eq!(trace.status, TraceStatus::Converged);
    assert!(trace.final_point().stacked().amax() <= 1e-8);
}

#[test]
fn sosc_factorization_at_optimum() {
    let g = example51().unwrap();
    let star = PrimalDualPoint::zeros(&g);
    let local = local_solutions_at(&g, &star, 1.0, 1e-12, None).unwrap();
    let mats = assemble_m_n_d(&g, &star, &local).unwrap();
    let (beta, gamma) = (0.1, 1.0);
    let stacked = stacked_mixing_matrix(&g, &local, beta);
    let plain = sosc_factor(&g, &star, beta, 0.0, false) * &mats.m;
    assert!(max_abs(&(&stacked - &plain)) <= 1e-8);
    let mut s_stacked = stacked.clone();
    for i in 0..2 {
        for j in 0..2 {
            s_stacked[(i, j)] +=
                gamma * correction_matrix(&g, i, &local[j].0, &local[j].1, false).unwrap()[(0, 0)];
        }
    }
    let augmented = sosc_factor(&g, &star, beta, gamma, false) * &mats.m;
    assert!(
        max_abs(&(&s_stacked - &augmented)) <= 1e-8,
        "{s_stacked} vs {augmented}"
    );
    let a = assemble_a(&g, &star, beta, gamma, false);
    let fac = sosc_factor(&g, &star, beta, gamma, false) * &mats.n;
    assert!(max_abs(&(&fac - &a)) <= 1e-8 * max_abs(&a));
}
