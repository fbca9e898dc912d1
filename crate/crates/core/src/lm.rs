//! Damped Gauss-Newton (Levenberg-Marquardt) solver for small dense problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonlinear least-squares problem `min ½‖r(p)‖²`.
pub trait LeastSquaresProblem {
    fn residuals(&self, p: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Initial damping relative to the largest diagonal entry of `JᵀJ`.
    pub initial_damping: f64,
    /// Stop when an accepted step reduces the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when the step is this small relative to the parameters.
    pub xtol: f64,
    /// Stop when the scaled gradient's largest entry falls below this.
    pub gtol: f64,
    /// Stop when the residual norm falls below this.
    pub residual_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            initial_damping: 1e-3,
            ftol: 1e-15,
            xtol: 1e-15,
            gtol: 1e-15,
            residual_tol: 1e-14,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("initial_damping", self.initial_damping),
            ("ftol", self.ftol),
            ("xtol", self.xtol),
            ("gtol", self.gtol),
            ("residual_tol", self.residual_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ResidualTolerance,
    CostTolerance,
    StepTolerance,
    GradientTolerance,
    /// Damping grew without bound: no descent direction could be found.
    Stalled,
    MaxIterations,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIterations)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmReport {
    pub params: DVector<f64>,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Minimizes `½‖r(p)‖²` from `p0`. Residual evaluation failures during a trial
/// step count as rejected steps; a failure at `p0` is returned as an error.
pub fn minimize<P: LeastSquaresProblem>(
    problem: &P,
    p0: DVector<f64>,
    cfg: &LmConfig,
) -> Result<LmReport> {
    cfg.validate()?;
    let mut p = p0;
    let mut r = problem.residuals(&p)?;
    let mut cost = 0.5 * r.norm_squared();
    let initial_cost = cost;
    let mut evaluations = 1;
    let mut jac = problem.jacobian(&p)?;
    let mut scale = DVector::from_fn(p.len(), |j, _| {
        jac.column(j).norm_squared().max(f64::MIN_POSITIVE)
    });
    let mut lambda = cfg.initial_damping * scale.max();
    let mut nu = 2.0;

    let report = |p: DVector<f64>, cost, iterations, evaluations, termination| LmReport {
        params: p,
        cost,
        initial_cost,
        iterations,
        evaluations,
        termination,
    };

    for iter in 0..cfg.max_iterations {
        if r.norm() <= cfg.residual_tol {
            return Ok(report(
                p,
                cost,
                iter,
                evaluations,
                Termination::ResidualTolerance,
            ));
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        for j in 0..p.len() {
            scale[j] = scale[j].max(jtj[(j, j)]);
        }
        let scaled_grad = grad
            .iter()
            .zip(scale.iter())
            .map(|(g, s)| g.abs() / s.sqrt())
            .fold(0.0, f64::max);
        if scaled_grad <= cfg.gtol * r.norm().max(f64::MIN_POSITIVE) {
            return Ok(report(
                p,
                cost,
                iter,
                evaluations,
                Termination::GradientTolerance,
            ));
        }

        // Inner loop: raise the damping until a step lowers the cost.
        loop {
            if !lambda.is_finite() || lambda > 1e300 {
                return Ok(report(p, cost, iter, evaluations, Termination::Stalled));
            }
            let mut a = jtj.clone();
            for j in 0..p.len() {
                a[(j, j)] += lambda * scale[j];
            }
            let step = match a.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => {
                    lambda *= nu;
                    nu *= 2.0;
                    continue;
                }
            };
            if step.norm() <= cfg.xtol * (p.norm() + cfg.xtol) {
                return Ok(report(
                    p,
                    cost,
                    iter,
                    evaluations,
                    Termination::StepTolerance,
                ));
            }
            let trial = &p + &step;
            evaluations += 1;
            let trial_r = match problem.residuals(&trial) {
                Ok(tr) if tr.iter().all(|x| x.is_finite()) => tr,
                _ => {
                    lambda *= nu;
                    nu *= 2.0;
                    continue;
                }
            };
            let trial_cost = 0.5 * trial_r.norm_squared();
            // Predicted reduction of the damped quadratic model.
            let scaled_step = step.component_mul(&scale);
            let predicted = 0.5 * step.dot(&(scaled_step * lambda - &grad));
            let rho = if predicted > 0.0 {
                (cost - trial_cost) / predicted
            } else {
                -1.0
            };
            if rho > 0.0 && trial_cost < cost {
                let reduction = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                r = trial_r;
                cost = trial_cost;
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                if reduction <= cfg.ftol {
                    return Ok(report(
                        p,
                        cost,
                        iter + 1,
                        evaluations,
                        Termination::CostTolerance,
                    ));
                }
                jac = problem.jacobian(&p)?;
                break;
            }
            lambda *= nu;
            nu *= 2.0;
        }
    }
    let it = cfg.max_iterations;
    Ok(report(p, cost, it, evaluations, Termination::MaxIterations))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as residuals (1 − x, 10(y − x²)).
    struct Rosenbrock;

    impl LeastSquaresProblem for Rosenbrock {
        fn residuals(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![
                1.0 - p[0],
                10.0 * (p[1] - p[0] * p[0]),
            ]))
        }
        fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(
                2,
                2,
                &[-1.0, 0.0, -20.0 * p[0], 10.0],
            ))
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let rep = minimize(
            &Rosenbrock,
            DVector::from_vec(vec![-1.2, 1.0]),
            &LmConfig::default(),
        )
        .unwrap();
        assert!(rep.termination.converged(), "{rep:?}");
        assert!((rep.params[0] - 1.0).abs() < 1e-10);
        assert!((rep.params[1] - 1.0).abs() < 1e-10);
    }

    /// Exponential fit with a nonzero optimum residual.
    struct ExpFit {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquaresProblem for ExpFit {
        fn residuals(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_iterator(
                self.t.len(),
                self.t
                    .iter()
                    .zip(&self.y)
                    .map(|(t, y)| p[0] * (p[1] * t).exp() - y),
            ))
        }
        fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_fn(self.t.len(), 2, |i, j| {
                let e = (p[1] * self.t[i]).exp();
                if j == 0 {
                    e
                } else {
                    p[0] * self.t[i] * e
                }
            }))
        }
    }

    #[test]
    fn zero_gradient_at_noisy_optimum() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t
            .iter()
            .enumerate()
            .map(|(i, t)| 2.0 * (-0.7 * t).exp() + if i % 2 == 0 { 1e-3 } else { -1e-3 })
            .collect();
        let prob = ExpFit { t, y };
        let rep = minimize(
            &prob,
            DVector::from_vec(vec![1.0, 0.0]),
            &LmConfig::default(),
        )
        .unwrap();
        assert!(rep.termination.converged(), "{rep:?}");
        let r = prob.residuals(&rep.params).unwrap();
        let g = prob.jacobian(&rep.params).unwrap().transpose() * r;
        assert!(g.amax() < 1e-10, "gradient {g}");
        assert!(rep.cost < rep.initial_cost);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let cfg = LmConfig {
            max_iterations: 1,
            ..LmConfig::default()
        };
        let rep = minimize(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &cfg).unwrap();
        assert_eq!(rep.termination, Termination::MaxIterations);
        assert!(!rep.termination.converged());
    }
}
