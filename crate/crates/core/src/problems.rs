//! Small built-in instances with analytic derivatives.

use std::sync::Arc;

use crate::linalg::{Matrix, Vector};
use crate::model::{AgentOracle, AgentSpec, ModelError, PrimalDualPoint, ProblemGraph};

/// `0.5 x_i²` with optional linear coupling equality `x_i + c x_j = 0`.
struct HalfSquare {
    coupling: Option<f64>,
}

impl AgentOracle for HalfSquare {
    fn objective(&self, z: &[f64]) -> f64 {
        0.5 * z[0] * z[0]
    }
    fn equalities(&self, z: &[f64]) -> Vector {
        match self.coupling {
            Some(c) => Vector::from_element(1, z[0] + c * z[1]),
            None => Vector::zeros(0),
        }
    }
    fn objective_gradient(&self, z: &[f64]) -> Vector {
        Vector::from_vec(vec![z[0], 0.0])
    }
    fn objective_hessian(&self, _z: &[f64]) -> Matrix {
        Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
    }
    fn equality_jacobian(&self, _z: &[f64]) -> Matrix {
        match self.coupling {
            Some(c) => Matrix::from_row_slice(1, 2, &[1.0, c]),
            None => Matrix::zeros(0, 2),
        }
    }
    fn equality_hessian(&self, _z: &[f64], _w: &[f64]) -> Matrix {
        Matrix::zeros(2, 2)
    }
}

/// Two agents, `min 0.5x_1² + 0.5x_2²  s.t.  x_1 + a x_2 = 0` (owned by agent 0),
/// optionally with `x_1 + x_2 = 0` owned by agent 1.
pub fn example31(a: f64, with_g2: bool) -> Result<ProblemGraph, ModelError> {
    let first = AgentSpec::new(1, vec![1], Arc::new(HalfSquare { coupling: Some(a) }))
        .with_equalities(1, 0);
    let second = if with_g2 {
        AgentSpec::new(
            1,
            vec![0],
            Arc::new(HalfSquare {
                coupling: Some(1.0),
            }),
        )
        .with_equalities(1, 0)
    } else {
        AgentSpec::new(1, vec![0], Arc::new(HalfSquare { coupling: None }))
    };
    ProblemGraph::new(vec![first, second])
}

/// `0.5 x_i x_j`, with `x_i - x_j = 0` for the constraint owner.
struct HalfProduct {
    owns_constraint: bool,
}

impl AgentOracle for HalfProduct {
    fn objective(&self, z: &[f64]) -> f64 {
        0.5 * z[0] * z[1]
    }
    fn equalities(&self, z: &[f64]) -> Vector {
        if self.owns_constraint {
            Vector::from_element(1, z[0] - z[1])
        } else {
            Vector::zeros(0)
        }
    }
    fn objective_gradient(&self, z: &[f64]) -> Vector {
        Vector::from_vec(vec![0.5 * z[1], 0.5 * z[0]])
    }
    fn objective_hessian(&self, _z: &[f64]) -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])
    }
    fn equality_jacobian(&self, _z: &[f64]) -> Matrix {
        if self.owns_constraint {
            Matrix::from_row_slice(1, 2, &[1.0, -1.0])
        } else {
            Matrix::zeros(0, 2)
        }
    }
    fn equality_hessian(&self, _z: &[f64], _w: &[f64]) -> Matrix {
        Matrix::zeros(2, 2)
    }
}

/// `min x_1 x_2  s.t.  x_1 - x_2 = 0`; solution `x = λ = 0`.
pub fn example51() -> Result<ProblemGraph, ModelError> {
    ProblemGraph::new(vec![
        AgentSpec::new(
            1,
            vec![1],
            Arc::new(HalfProduct {
                owns_constraint: true,
            }),
        )
        .with_equalities(1, 0),
        AgentSpec::new(
            1,
            vec![0],
            Arc::new(HalfProduct {
                owns_constraint: false,
            }),
        ),
    ])
}

/// `w (x_i - t)²` with inequality `b + σ x_i x_j <= 0`.
struct BilinearBound {
    weight: f64,
    target: f64,
    offset: f64,
    sign: f64,
}

impl AgentOracle for BilinearBound {
    fn objective(&self, z: &[f64]) -> f64 {
        self.weight * (z[0] - self.target).powi(2)
    }
    fn inequalities(&self, z: &[f64]) -> Vector {
        Vector::from_element(1, self.offset + self.sign * z[0] * z[1])
    }
    fn objective_gradient(&self, z: &[f64]) -> Vector {
        Vector::from_vec(vec![2.0 * self.weight * (z[0] - self.target), 0.0])
    }
    fn objective_hessian(&self, _z: &[f64]) -> Matrix {
        Matrix::from_row_slice(2, 2, &[2.0 * self.weight, 0.0, 0.0, 0.0])
    }
    fn inequality_jacobian(&self, z: &[f64]) -> Matrix {
        Matrix::from_row_slice(1, 2, &[self.sign * z[1], self.sign * z[0]])
    }
    fn inequality_hessian(&self, _z: &[f64], w: &[f64]) -> Matrix {
        let c = self.sign * w[0];
        Matrix::from_row_slice(2, 2, &[0.0, c, c, 0.0])
    }
}

/// `min 2(x_1 - 1)² + (x_2 - 2)²  s.t.  -1 - x_1x_2 <= 0,  -1.5 + x_1x_2 <= 0`.
pub fn nlp61() -> Result<ProblemGraph, ModelError> {
    ProblemGraph::new(vec![
        AgentSpec::new(
            1,
            vec![1],
            Arc::new(BilinearBound {
                weight: 2.0,
                target: 1.0,
                offset: -1.0,
                sign: -1.0,
            }),
        )
        .with_inequalities(1, 0),
        AgentSpec::new(
            1,
            vec![0],
            Arc::new(BilinearBound {
                weight: 1.0,
                target: 2.0,
                offset: -1.5,
                sign: 1.0,
            }),
        )
        .with_inequalities(1, 0),
    ])
}

/// Starting point `p⁰ = (1.4, 1.4, 0, 0)` for [`nlp61`].
pub fn nlp61_initial_point(graph: &ProblemGraph) -> PrimalDualPoint {
    PrimalDualPoint::from_stacked(graph, &Vector::from_vec(vec![1.4, 1.4, 0.0, 0.0]))
        .expect("nlp61 layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        central_kkt_residual, finite_difference_audit, neighbor_lagrangian_gradient,
    };
    use approx::assert_relative_eq;

    #[test]
    fn nlp61_sensitivities_match_closed_form() {
        let g = nlp61().unwrap();
        let p =
            PrimalDualPoint::from_stacked(&g, &Vector::from_vec(vec![0.7, 1.9, 0.3, 0.5])).unwrap();
        // ∇_{x2} L_1 = -μ_1 x_1 and ∇_{x1} L_2 = μ_2 x_2.
        assert_relative_eq!(
            neighbor_lagrangian_gradient(&g, 0, 1, &p).unwrap()[0],
            -0.3 * 0.7
        );
        assert_relative_eq!(
            neighbor_lagrangian_gradient(&g, 1, 0, &p).unwrap()[0],
            0.5 * 1.9
        );
    }

    #[test]
    fn example31_sensitivity_is_a_lambda() {
        let a = 0.7;
        let g = example31(a, false).unwrap();
        let p = PrimalDualPoint::from_stacked(&g, &Vector::from_vec(vec![0.2, -0.4, 1.3])).unwrap();
        assert_relative_eq!(
            neighbor_lagrangian_gradient(&g, 0, 1, &p).unwrap()[0],
            a * 1.3
        );
    }

    #[test]
    fn printed_optimum_is_near_kkt() {
        let g = nlp61().unwrap();
        let p = PrimalDualPoint::from_stacked(&g, &Vector::from_vec(vec![0.82, 1.84, 0.0, 0.4]))
            .unwrap();
        assert!(central_kkt_residual(&g, &p) <= 5e-2);
    }

    #[test]
    fn analytic_derivatives_pass_audit() {
        for g in [
            nlp61().unwrap(),
            example51().unwrap(),
            example31(4.0, true).unwrap(),
        ] {
            let mut p = PrimalDualPoint::zeros(&g);
            p.x.iter_mut()
                .enumerate()
                .for_each(|(k, v)| *v = 0.3 + 0.4 * k as f64);
            p.lambda.fill(0.7);
            p.mu.fill(0.2);
            let report = finite_difference_audit(&g, &p, 1e-5);
            assert!(report.passes(1e-6), "{report:?}");
        }
    }
}
