//! Loss evaluation and the inner iterations shared by the penalized and
//! restricted fits.

use nalgebra::{DMatrix, DVector};

use super::StepRule;
use crate::error::{Error, Result};
use crate::family::{Family, SmoothedLoss};

/// Where the solver reads loss values and derivatives from.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Oracle<'a> {
    Exact(&'a Family),
    Smoothed(SmoothedLoss),
}

impl Oracle<'_> {
    pub fn value(&self, y: f64, z: f64) -> Result<f64> {
        match self {
            Oracle::Exact(f) => f.loss(y, z),
            Oracle::Smoothed(s) => Ok(s.value(y, z)),
        }
    }

    pub fn derivative(&self, y: f64, z: f64) -> Result<f64> {
        match self {
            Oracle::Exact(f) => f.loss_derivative(y, z),
            Oracle::Smoothed(s) => Ok(s.derivative(y, z)),
        }
    }

    /// Curvature used by Newton steps: the Fisher weight `g h` for
    /// quasi-likelihoods (exact for canonical links), the second derivative
    /// otherwise.
    pub fn curvature(&self, y: f64, z: f64) -> Result<f64> {
        match self {
            Oracle::Exact(Family::Quasi(q)) => q.fisher_weight(z),
            Oracle::Exact(Family::Robust(r)) => Ok(r.second_derivative(y, z).unwrap_or(0.0)),
            Oracle::Smoothed(s) => Ok(s.second_derivative(y, z)),
        }
    }
}

/// A design (or a column subset of one) paired with responses.
pub(crate) struct Engine<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
}

impl Engine<'_> {
    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    pub fn eta(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.x * beta
    }

    pub fn risk(&self, eta: &DVector<f64>, oracle: &Oracle) -> Result<f64> {
        let mut total = 0.0;
        for (i, &z) in eta.iter().enumerate() {
            total += oracle.value(self.y[i], z)?;
        }
        let r = total / self.n();
        if r.is_finite() {
            Ok(r)
        } else {
            Err(Error::Solver("empirical risk is not finite".into()))
        }
    }

    pub fn residual_derivatives(&self, eta: &DVector<f64>, oracle: &Oracle) -> Result<DVector<f64>> {
        let mut d = DVector::zeros(eta.len());
        for (i, &z) in eta.iter().enumerate() {
            d[i] = oracle.derivative(self.y[i], z)?;
        }
        Ok(d)
    }

    /// Gradient of the empirical risk, `X^T d / n`.
    pub fn gradient(&self, eta: &DVector<f64>, oracle: &Oracle) -> Result<DVector<f64>> {
        Ok(self.x.tr_mul(&self.residual_derivatives(eta, oracle)?) / self.n())
    }

    /// `X_A^T D X_A / n` for the columns in `active`.
    pub fn hessian(&self, eta: &DVector<f64>, oracle: &Oracle, active: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.x.nrows();
        let mut w = Vec::with_capacity(n);
        for (i, &z) in eta.iter().enumerate() {
            w.push(oracle.curvature(self.y[i], z)?);
        }
        let xa = self.x.select_columns(active);
        let weighted = DMatrix::from_fn(n, active.len(), |i, k| w[i] * xa[(i, k)]);
        Ok(xa.tr_mul(&weighted) / self.n())
    }

    /// Upper estimate of the largest eigenvalue of `X^T X / n` by power iteration.
    pub fn gram_norm(&self) -> f64 {
        let p = self.x.ncols();
        if p == 0 {
            return 0.0;
        }
        let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        let mut estimate = 0.0;
        for _ in 0..100 {
            let w = self.x.tr_mul(&(self.x * &v)) / self.n();
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let converged = (norm - estimate).abs() <= 1e-6 * norm;
            estimate = norm;
            v = w / norm;
            if converged {
                break;
            }
        }
        // power iteration approaches from below
        estimate * 1.01
    }
}

pub(crate) fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub(crate) fn l1(beta: &DVector<f64>) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Worst violation of the smooth KKT conditions in units of `lambda`.
/// With `lambda = 0` it is the sup-norm of the gradient.
pub(crate) fn smooth_kkt_violation(gradient: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return gradient.amax();
    }
    gradient
        .iter()
        .zip(beta.iter())
        .map(|(&g, &b)| {
            let tau = -g / lambda;
            if b != 0.0 {
                (tau - b.signum()).abs()
            } else {
                (tau.abs() - 1.0).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub(crate) struct ProxOutcome {
    pub beta: DVector<f64>,
    pub iterations: usize,
}

/// Monotone FISTA with backtracking on `risk + lambda ||beta||_1`.
///
/// Stops when the smooth KKT violation drops to `tol` or after `budget`
/// iterations. `lipschitz` carries the step estimate across calls. Each
/// accepted objective value is pushed onto `trace` when one is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fista(
    engine: &Engine,
    oracle: &Oracle,
    lambda: f64,
    start: DVector<f64>,
    tol: f64,
    budget: usize,
    lipschitz: &mut f64,
    rule: &StepRule,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<ProxOutcome> {
    let mut x = start;
    let mut eta_x = engine.eta(&x);
    let mut fx = engine.risk(&eta_x, oracle)? + lambda * l1(&x);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut iterations = 0;
    let mut violation = smooth_kkt_violation(&engine.gradient(&eta_x, oracle)?, &x, lambda);
    while violation > tol && iterations < budget {
        iterations += 1;
        let eta_y = engine.eta(&y);
        let risk_y = engine.risk(&eta_y, oracle)?;
        let grad_y = engine.gradient(&eta_y, oracle)?;
        let (next, eta_next, f_next) = loop {
            let step = 1.0 / *lipschitz;
            let candidate = (&y - step * &grad_y).map(|v| soft_threshold(v, step * lambda));
            let diff = &candidate - &y;
            let eta_c = engine.eta(&candidate);
            if let Ok(risk_c) = engine.risk(&eta_c, oracle) {
                let model = risk_y + grad_y.dot(&diff) + 0.5 * *lipschitz * diff.norm_squared();
                if risk_c <= model + 1e-12 * risk_y.abs().max(1e-300) {
                    break (candidate.clone(), eta_c, risk_c + lambda * l1(&candidate));
                }
            }
            *lipschitz *= rule.increase;
            if !lipschitz.is_finite() || *lipschitz > 1e300 {
                return Err(Error::Solver("backtracking step size collapsed".into()));
            }
        };
        if f_next > fx {
            // restart momentum from the last accepted iterate
            t = 1.0;
            y.copy_from(&x);
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + ((t - 1.0) / t_next) * (&next - &x);
        x = next;
        eta_x = eta_next;
        fx = f_next;
        t = t_next;
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(fx);
        }
        violation = smooth_kkt_violation(&engine.gradient(&eta_x, oracle)?, &x, lambda);
        // let the step grow back after conservative backtracking
        *lipschitz *= rule.decrease;
    }
    Ok(ProxOutcome { beta: x, iterations })
}

/// Damped Newton steps on the current support with its signs held fixed.
///
/// A coordinate that would change sign stops the step at zero and leaves
/// the support for the following steps. Returns the
/// improved point when the objective decreased, `None` otherwise.
pub(crate) fn newton_polish(
    engine: &Engine,
    oracle: &Oracle,
    lambda: f64,
    start: &DVector<f64>,
    tol: f64,
    max_steps: usize,
) -> Result<Option<(DVector<f64>, f64)>> {
    let mut beta = start.clone();
    let mut eta = engine.eta(&beta);
    let f_start = engine.risk(&eta, oracle)? + lambda * l1(&beta);
    let mut f = f_start;
    for _ in 0..max_steps {
        let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
        if active.is_empty() {
            break;
        }
        let signs: Vec<f64> = active.iter().map(|&j| beta[j].signum()).collect();
        let grad = engine.gradient(&eta, oracle)?;
        let reduced = DVector::from_fn(active.len(), |k, _| grad[active[k]] + lambda * signs[k]);
        if reduced.amax() <= tol {
            break;
        }
        let mut hess = engine.hessian(&eta, oracle, &active)?;
        let ridge = 1e-12 * hess.diagonal().amax().max(1e-300);
        for k in 0..active.len() {
            hess[(k, k)] += ridge;
        }
        let direction = match hess.clone().cholesky() {
            Some(chol) => -chol.solve(&reduced),
            None => match hess.svd(true, true).solve(&reduced, 1e-14) {
                Ok(v) => -v,
                Err(_) => break,
            },
        };
        // largest step that keeps every active sign
        let mut max_step = 1.0_f64;
        let mut blocking = None;
        for (k, &j) in active.iter().enumerate() {
            let d = direction[k];
            if d * signs[k] < 0.0 {
                let limit = -beta[j] / d;
                if limit < max_step {
                    max_step = limit;
                    blocking = Some(j);
                }
            }
        }
        let mut step = max_step;
        let mut accepted = false;
        for _ in 0..40 {
            let mut candidate = beta.clone();
            for (k, &j) in active.iter().enumerate() {
                candidate[j] += step * direction[k];
                if candidate[j] * signs[k] < 0.0 {
                    candidate[j] = 0.0;
                }
            }
            if step == max_step {
                if let Some(j) = blocking {
                    candidate[j] = 0.0;
                }
            }
            let eta_c = engine.eta(&candidate);
            if let Ok(r) = engine.risk(&eta_c, oracle) {
                let fc = r + lambda * l1(&candidate);
                // near the optimum the decrease drops below rounding of f;
                // a full step that shrinks the reduced gradient is then kept
                let within_rounding = step == max_step
                    && fc <= f + 1e-13 * f.abs().max(1e-300)
                    && reduced_gradient(engine, oracle, lambda, &candidate, &eta_c)? < 0.5 * reduced.amax();
                if fc <= f || within_rounding {
                    beta = candidate;
                    eta = eta_c;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if beta != *start {
        Ok(Some((beta, f)))
    } else {
        Ok(None)
    }
}

fn reduced_gradient(engine: &Engine, oracle: &Oracle, lambda: f64, beta: &DVector<f64>, eta: &DVector<f64>) -> Result<f64> {
    let grad = engine.gradient(eta, oracle)?;
    Ok((0..beta.len())
        .filter(|&j| beta[j] != 0.0)
        .map(|j| (grad[j] + lambda * beta[j].signum()).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(1.0, 0.2), 0.8);
        assert_eq!(soft_threshold(-0.1, 0.2), 0.0);
        assert_eq!(soft_threshold(-1.0, 0.0), -1.0);
    }

    #[test]
    fn gram_norm_bounds_largest_eigenvalue() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, -1.0]);
        let y = [0.0; 3];
        let engine = Engine { x: &x, y: &y };
        let exact = (x.tr_mul(&x) / 3.0).symmetric_eigen().eigenvalues.max();
        let est = engine.gram_norm();
        assert!(est >= exact && est <= 1.02 * exact);
    }
}
