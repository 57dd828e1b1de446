//! Levenberg-Marquardt for small dense robust least-squares problems.
//!
//! Minimizes `sum_k rho(r_k(theta))` where `rho` is either the squared loss
//! `r^2 / 2` or the Cauchy loss `(c^2 / 2) ln(1 + r^2 / c^2)`. Each iteration
//! solves the reweighted normal equations
//! `(J^T W J + lambda diag(J^T W J)) delta = -J^T W r` with
//! `W = diag(rho'(r) / r)`, recomputing the weights at every accepted point.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Residual model evaluated by the solver.
pub trait ResidualModel<T: Real> {
    fn num_params(&self) -> usize;

    fn num_residuals(&self) -> usize;

    /// Fills `residuals` (length `num_residuals`) and, when requested, the
    /// row-major Jacobian `d r_k / d theta_j` (length `num_residuals * num_params`).
    fn evaluate(&self, params: &[T], residuals: &mut [T], jacobian: Option<&mut [T]>);
}

/// Per-residual loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss<T> {
    Squared,
    Cauchy { scale: T },
}

impl<T: Real> Loss<T> {
    pub fn rho(&self, r: T) -> T {
        let half = T::lit(0.5);
        match *self {
            Loss::Squared => half * r * r,
            Loss::Cauchy { scale } => {
                let c2 = scale * scale;
                half * c2 * (r * r / c2).ln_1p()
            }
        }
    }

    /// IRLS weight `rho'(r) / r`.
    pub fn weight(&self, r: T) -> T {
        match *self {
            Loss::Squared => T::one(),
            Loss::Cauchy { scale } => T::one() / (T::one() + r * r / (scale * scale)),
        }
    }

    pub fn total(&self, residuals: &[T]) -> T {
        residuals.iter().map(|&r| self.rho(r)).sum()
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmSettings {
    pub max_iterations: usize,
    /// Stop when the largest cosine between the weighted residual vector and
    /// a weighted Jacobian column, `|g_j| / sqrt(H_jj * r^T W r)`, is at most
    /// this. Invariant to the scale of each parameter.
    pub gradient_tolerance: f64,
    /// Stop when `|delta| <= step_tolerance * (|theta| + step_tolerance)`.
    pub step_tolerance: f64,
    /// When no damped step lowers the cost, the point still counts as
    /// converged if the undamped model predicts a relative decrease of at
    /// most this, i.e. the remaining progress is below rounding.
    #[serde(default = "default_cost_tolerance")]
    pub cost_tolerance: f64,
    pub initial_damping: f64,
}

fn default_cost_tolerance() -> f64 {
    1e-12
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            cost_tolerance: default_cost_tolerance(),
            initial_damping: 1e-3,
        }
    }
}

/// Final state of a solve. `params` is the best point visited.
#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome<T> {
    pub params: Vec<T>,
    pub cost: T,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: T,
}

const MAX_DAMPING: f64 = 1e16;
const MIN_DIAGONAL: f64 = 1e-12;

pub fn minimize<T: Real, M: ResidualModel<T>>(
    model: &M,
    initial: &[T],
    loss: Loss<T>,
    settings: &LmSettings,
) -> LmOutcome<T> {
    let n = model.num_params();
    let m = model.num_residuals();
    assert_eq!(initial.len(), n, "parameter vector length");

    let mut params = initial.to_vec();
    let mut residuals = vec![T::zero(); m];
    let mut jacobian = vec![T::zero(); m * n];
    let mut trial_residuals = vec![T::zero(); m];

    model.evaluate(&params, &mut residuals, Some(&mut jacobian));
    let mut cost = loss.total(&residuals);
    let mut damping = T::lit(settings.initial_damping);
    let gtol = T::lit(settings.gradient_tolerance);
    let xtol = T::lit(settings.step_tolerance);

    let mut iterations = 0;
    let mut converged = false;
    let mut gradient_norm;
    let mut hessian = vec![T::zero(); n * n];
    let mut gradient = vec![T::zero(); n];

    loop {
        let wrr = normal_equations(&residuals, &jacobian, n, &loss, &mut hessian, &mut gradient);
        gradient_norm = scaled_gradient(&gradient, &hessian, wrr, n);
        if !gradient_norm.is_finite() {
            break;
        }
        if gradient_norm <= gtol {
            converged = true;
            break;
        }
        if iterations >= settings.max_iterations {
            break;
        }
        iterations += 1;

        // Inner loop: raise damping until a step decreases the cost.
        let mut accepted = false;
        while damping.as_f64() < MAX_DAMPING {
            let mut damped = hessian.clone();
            for j in 0..n {
                let d = hessian[j * n + j].max(T::lit(MIN_DIAGONAL));
                damped[j * n + j] = hessian[j * n + j] + damping * d;
            }
            let rhs: Vec<T> = gradient.iter().map(|g| -*g).collect();
            let Some(step) = solve_spd(&damped, &rhs, n) else {
                damping = damping * T::lit(10.0);
                continue;
            };
            let trial: Vec<T> = params.iter().zip(&step).map(|(p, s)| *p + *s).collect();
            model.evaluate(&trial, &mut trial_residuals, None);
            let trial_cost = loss.total(&trial_residuals);
            if trial_cost.is_finite() && trial_cost < cost {
                let step_norm = norm(&step);
                let param_norm = norm(&params);
                params = trial;
                cost = trial_cost;
                model.evaluate(&params, &mut residuals, Some(&mut jacobian));
                damping = (damping / T::lit(10.0)).max(T::lit(1e-12));
                accepted = true;
                if step_norm <= xtol * (param_norm + xtol) {
                    converged = true;
                }
                break;
            }
            damping = damping * T::lit(10.0);
        }
        if !accepted {
            converged = predicted_decrease(&hessian, &gradient, n)
                .is_some_and(|p| p <= T::lit(settings.cost_tolerance) * cost);
        }
        if !accepted || converged {
            let wrr =
                normal_equations(&residuals, &jacobian, n, &loss, &mut hessian, &mut gradient);
            gradient_norm = scaled_gradient(&gradient, &hessian, wrr, n);
            break;
        }
    }

    LmOutcome {
        params,
        cost,
        iterations,
        converged,
        gradient_norm,
    }
}

/// Decrease of the quadratic model at the Gauss-Newton step, `g^T H^-1 g / 2`.
fn predicted_decrease<T: Real>(hessian: &[T], gradient: &[T], n: usize) -> Option<T> {
    let step = solve_spd(hessian, gradient, n)?;
    Some(T::lit(0.5) * gradient.iter().zip(&step).map(|(g, s)| *g * *s).sum::<T>())
}

fn scaled_gradient<T: Real>(gradient: &[T], hessian: &[T], wrr: T, n: usize) -> T {
    if !(wrr > T::zero()) {
        return T::zero();
    }
    (0..n).fold(T::zero(), |acc, j| {
        let h = hessian[j * n + j];
        if h > T::zero() {
            acc.max(gradient[j].abs() / (h * wrr).sqrt())
        } else {
            acc
        }
    })
}

/// Accumulates `J^T W J` and `J^T W r`; returns `r^T W r`.
fn normal_equations<T: Real>(
    residuals: &[T],
    jacobian: &[T],
    n: usize,
    loss: &Loss<T>,
    hessian: &mut [T],
    gradient: &mut [T],
) -> T {
    let mut wrr = T::zero();
    hessian.iter_mut().for_each(|v| *v = T::zero());
    gradient.iter_mut().for_each(|v| *v = T::zero());
    for (k, &r) in residuals.iter().enumerate() {
        let w = loss.weight(r);
        wrr = wrr + w * r * r;
        let row = &jacobian[k * n..(k + 1) * n];
        for a in 0..n {
            let wa = w * row[a];
            gradient[a] = gradient[a] + wa * r;
            for b in a..n {
                hessian[a * n + b] = hessian[a * n + b] + wa * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            hessian[a * n + b] = hessian[b * n + a];
        }
    }
    wrr
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major) by Cholesky.
pub(crate) fn solve_spd<T: Real>(a: &[T], b: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let s = (0..i).fold(b[i], |s, k| s - l[i * n + k] * y[k]);
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let s = (i + 1..n).fold(y[i], |s, k| s - l[k * n + i] * x[k]);
        x[i] = s / l[i * n + i];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y = a exp(b t), the usual exponential-decay toy problem.
    struct ExpDecay {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl ResidualModel<f64> for ExpDecay {
        fn num_params(&self) -> usize {
            2
        }
        fn num_residuals(&self) -> usize {
            self.t.len()
        }
        fn evaluate(&self, p: &[f64], r: &mut [f64], j: Option<&mut [f64]>) {
            for (k, (&t, &y)) in self.t.iter().zip(&self.y).enumerate() {
                r[k] = p[0] * (p[1] * t).exp() - y;
            }
            if let Some(j) = j {
                for (k, &t) in self.t.iter().enumerate() {
                    let e = (p[1] * t).exp();
                    j[2 * k] = e;
                    j[2 * k + 1] = p[0] * t * e;
                }
            }
        }
    }

    fn decay(outlier: bool) -> ExpDecay {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let mut y: Vec<f64> = t.iter().map(|t| 2.0 * (-1.3 * t).exp()).collect();
        if outlier {
            y[5] += 3.0;
        }
        ExpDecay { t, y }
    }

    #[test]
    fn recovers_exact_parameters() {
        let out = minimize(
            &decay(false),
            &[1.0, -0.5],
            Loss::Squared,
            &LmSettings::default(),
        );
        assert!(out.converged);
        assert!((out.params[0] - 2.0).abs() < 1e-8);
        assert!((out.params[1] + 1.3).abs() < 1e-8);
    }

    #[test]
    fn cauchy_loss_resists_outlier() {
        let settings = LmSettings::default();
        let plain = minimize(&decay(true), &[1.0, -0.5], Loss::Squared, &settings);
        let robust = minimize(
            &decay(true),
            &[1.0, -0.5],
            Loss::Cauchy { scale: 0.05 },
            &settings,
        );
        let err = |p: &[f64]| (p[0] - 2.0).abs() + (p[1] + 1.3).abs();
        assert!(err(&robust.params) < 0.1 * err(&plain.params));
    }

    #[test]
    fn cauchy_weight_matches_loss_derivative() {
        let loss = Loss::Cauchy { scale: 0.7f64 };
        for &r in &[-2.0f64, -0.3, 0.1, 1.5] {
            let h = 1e-6;
            let d = (loss.rho(r + h) - loss.rho(r - h)) / (2.0 * h);
            assert!((d - loss.weight(r) * r).abs() < 1e-8);
        }
    }

    #[test]
    fn spd_solver() {
        let a = [4.0f64, 1.0, 1.0, 3.0];
        let x = solve_spd(&a, &[1.0, 2.0], 2).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
        assert!(solve_spd(&[1.0, 2.0, 2.0, 1.0], &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let settings = LmSettings {
            max_iterations: 1,
            ..LmSettings::default()
        };
        let out = minimize(&decay(false), &[0.1, 0.5], Loss::Squared, &settings);
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }
}
