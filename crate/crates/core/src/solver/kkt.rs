//! KKT certificates for l1-penalized fits.
//!
//! With `tau = -grad R_n(beta) / lambda`, a point is optimal when
//! `||tau||_inf <= 1` and `tau_j = sign(beta_j)` wherever `beta_j != 0`.
//! For nonsmooth losses the gradient is only known up to the
//! subdifferential at observations sitting on a kink; each coordinate then
//! ranges over an interval and the certificate uses its best point.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::PenalizedProblem;
use crate::error::{Error, Result};
use crate::family::Family;

/// Residuals `|y - z|` below `KINK_TOL (1 + |y|)` count as sitting on a kink.
pub const KINK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub tau_hat: Vec<f64>,
    /// `max(0, ||tau_hat||_inf - 1)`.
    pub sup_violation: f64,
    /// Largest `|tau_hat_j - sign(beta_j)|` on the active set.
    pub sign_violation: f64,
    pub sign_ok: bool,
    /// Observations treated as sitting on a kink.
    pub kinks: usize,
}

impl KktReport {
    pub fn worst(&self) -> f64 {
        self.sup_violation.max(self.sign_violation)
    }
}

/// Derivative selections and half-widths of the subdifferential per observation.
pub(crate) fn derivative_intervals(family: &Family, y: &[f64], eta: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, usize)> {
    let n = y.len();
    let mut mid = DVector::zeros(n);
    let mut half = DVector::zeros(n);
    let mut kinks = 0;
    for i in 0..n {
        let z = eta[i];
        let sub = match family {
            Family::Robust(r) if !r.is_smooth() && (y[i] - z).abs() <= KINK_TOL * (1.0 + y[i].abs()) => {
                family.subgradient(y[i], y[i])?
            }
            _ => family.subgradient(y[i], z)?,
        };
        if sub.at_kink {
            kinks += 1;
            mid[i] = 0.5 * (sub.lower + sub.upper);
            half[i] = 0.5 * (sub.upper - sub.lower);
        } else {
            mid[i] = sub.selection;
        }
    }
    Ok((mid, half, kinks))
}

pub fn kkt_residual(problem: &PenalizedProblem, beta: &[f64]) -> Result<KktReport> {
    kkt_residual_with_tol(problem, beta, 1e-6)
}

/// KKT report with `sign_ok` decided at tolerance `tol`.
pub fn kkt_residual_with_tol(problem: &PenalizedProblem, beta: &[f64], tol: f64) -> Result<KktReport> {
    let lambda = problem.lambda();
    if lambda <= 0.0 {
        return Err(Error::InvalidParameter("KKT residual needs lambda > 0".into()));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidParameter("coefficients must be finite".into()));
    }
    let design = problem.design();
    let x = design.matrix();
    let n = design.n() as f64;
    let eta = design.predict(beta)?;
    let (mid, half, kinks) = derivative_intervals(problem.family(), problem.response(), &eta)?;
    let center = x.tr_mul(&mid) / n;
    let radius = x.abs().tr_mul(&half) / n;
    let mut tau_hat = vec![0.0; beta.len()];
    let mut sup_violation = 0.0_f64;
    let mut sign_violation = 0.0_f64;
    for j in 0..beta.len() {
        // tau_j ranges over [lo, hi]
        let lo = (-center[j] - radius[j]) / lambda;
        let hi = (-center[j] + radius[j]) / lambda;
        let target = if beta[j] != 0.0 { beta[j].signum() } else { 0.0 };
        let tau = target.clamp(lo, hi);
        tau_hat[j] = tau;
        sup_violation = sup_violation.max(tau.abs() - 1.0);
        if beta[j] != 0.0 {
            sign_violation = sign_violation.max((tau - target).abs());
        }
    }
    Ok(KktReport {
        tau_hat,
        sup_violation: sup_violation.max(0.0),
        sign_violation,
        sign_ok: sign_violation <= tol,
        kinks,
    })
}
