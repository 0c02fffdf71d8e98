use std::fmt;

use crate::linalg::{min_row_singular_value, min_sym_eigenvalue, null_space, Matrix};
use crate::model::{
    central_hessian, central_inequalities, central_jacobians, local_lagrangian_hessian,
    PrimalDualPoint, ProblemGraph,
};

const MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub witness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// Active inequalities whose multiplier does not separate from zero.
    pub degenerate: Vec<usize>,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self, name: &str) -> bool {
        self.get(name).is_some_and(|c| c.passed)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<24} {:<4} {:.6e}",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.witness
            )?;
        }
        Ok(())
    }
}

fn stack_rows(parts: &[(&Matrix, &[usize])], cols: usize) -> Matrix {
    let rows: usize = parts.iter().map(|(_, r)| r.len()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut at = 0;
    for (m, sel) in parts {
        for &r in *sel {
            out.set_row(at, &m.row(r));
            at += 1;
        }
    }
    out
}

fn reduced_min_eig(hess: &Matrix, j: &Matrix) -> f64 {
    let z = null_space(j, 1e-10);
    if z.ncols() == 0 {
        return f64::INFINITY;
    }
    min_sym_eigenvalue(&(z.transpose() * hess * &z))
}

/// Regularity checks at an approximate KKT point. Inequalities with
/// `|h_k| <= tau` count as active.
pub fn check_assumptions(
    graph: &ProblemGraph,
    point: &PrimalDualPoint,
    rho: f64,
    tau: f64,
) -> AssumptionReport {
    let n = graph.n();
    let h = central_inequalities(graph, &point.x);
    let active: Vec<usize> = (0..h.len()).filter(|&k| h[k].abs() <= tau).collect();
    let degenerate: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&k| point.mu[k] <= tau)
        .collect();
    let (jg, jh) = central_jacobians(graph, &point.x);
    let hess = central_hessian(graph, point);
    let all_g: Vec<usize> = (0..graph.n_g()).collect();
    let j_act = stack_rows(&[(&jg, &all_g), (&jh, &active)], n);

    let mut checks = Vec::new();
    let sc = active
        .iter()
        .map(|&k| point.mu[k])
        .fold(f64::INFINITY, f64::min);
    checks.push(AssumptionCheck {
        name: "strict_complementarity",
        passed: sc > tau,
        witness: sc,
    });
    let licq = min_row_singular_value(&j_act);
    checks.push(AssumptionCheck {
        name: "licq",
        passed: licq > MARGIN,
        witness: licq,
    });
    let uniform = min_sym_eigenvalue(&hess);
    checks.push(AssumptionCheck {
        name: "uniform_sosc",
        passed: uniform > MARGIN,
        witness: uniform,
    });

    let mut local_pd = f64::INFINITY;
    let mut local_licq = f64::INFINITY;
    for i in 0..graph.num_agents() {
        let a = graph.agent(i);
        let s = point.agent_slice(graph, i);
        let z = graph.gather_z(i, &point.x);
        let hi = local_lagrangian_hessian(a.oracle.as_ref(), &z, &s.lambda, &s.mu);
        let own =
            hi.view((0, 0), (a.dim, a.dim)).into_owned() + Matrix::identity(a.dim, a.dim) * rho;
        local_pd = local_pd.min(min_sym_eigenvalue(&own));

        let xr = graph.x_range(i);
        let g_rows: Vec<usize> = graph.g_range(i).collect();
        let h_rows: Vec<usize> = graph.h_range(i).filter(|k| active.contains(k)).collect();
        let jg_own = jg.columns(xr.start, xr.len()).into_owned();
        let jh_own = jh.columns(xr.start, xr.len()).into_owned();
        let ji = stack_rows(&[(&jg_own, &g_rows), (&jh_own, &h_rows)], xr.len());
        local_licq = local_licq.min(min_row_singular_value(&ji));
    }
    checks.push(AssumptionCheck {
        name: "local_convexity",
        passed: local_pd > MARGIN,
        witness: local_pd,
    });
    checks.push(AssumptionCheck {
        name: "local_licq",
        passed: local_licq > MARGIN,
        witness: local_licq,
    });

    let sosc = reduced_min_eig(&hess, &j_act);
    checks.push(AssumptionCheck {
        name: "sosc",
        passed: sosc > MARGIN,
        witness: sosc,
    });

    let mut dec_g = Vec::new();
    let mut dec_h = Vec::new();
    for i in 0..graph.num_agents() {
        let a = graph.agent(i);
        dec_g.extend(graph.g_range(i).take(a.decoupled_eq));
        dec_h.extend(
            graph
                .h_range(i)
                .take(a.decoupled_ineq)
                .filter(|k| active.contains(k)),
        );
    }
    let j_dec = stack_rows(&[(&jg, &dec_g), (&jh, &dec_h)], n);
    let partial = reduced_min_eig(&hess, &j_dec);
    checks.push(AssumptionCheck {
        name: "partial_sosc",
        passed: partial > MARGIN,
        witness: partial,
    });

    AssumptionReport { checks, degenerate }
}
