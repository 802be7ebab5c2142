//! Quasi-likelihood families built from a variance function and an inverse link.
//!
//! The loss is `rho(y, z) = -Q(y, G(z))` with
//! `Q(y, mu) = int_y^mu (y - u) / V(u) du`. Built-in models supply closed
//! forms; any other [`QuasiModel`] falls back to adaptive quadrature.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;

/// Relative tolerance of the quadrature fallback.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// A variance function paired with an inverse link.
///
/// Only `variance`, `inverse_link`, `link_derivative` and `mean_domain` are
/// required. The `*_closed` hooks return `None` when no closed form exists,
/// in which case [`QuasiFamily`] integrates numerically.
pub trait QuasiModel: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// `V(u)`.
    fn variance(&self, mu: f64) -> f64;

    /// `G(z)`.
    fn inverse_link(&self, z: f64) -> f64;

    /// `g(z) = dG/dz`.
    fn link_derivative(&self, z: f64) -> f64;

    /// Open interval containing every admissible mean.
    fn mean_domain(&self) -> (f64, f64);

    /// Closed interval of admissible responses.
    fn response_domain(&self) -> (f64, f64) {
        self.mean_domain()
    }

    /// `V(G(z))`; override when the composition is more accurate in `z`.
    fn variance_at(&self, z: f64) -> f64 {
        self.variance(self.inverse_link(z))
    }

    fn loss_closed(&self, _y: f64, _z: f64) -> Option<f64> {
        None
    }

    fn canonical_link_closed(&self, _mu: f64, _y0: f64) -> Option<f64> {
        None
    }

    fn regret_closed(&self, _mu: f64, _mu0: f64) -> Option<f64> {
        None
    }

    /// `H(z) = gamma(G(z))` evaluated directly in `z`.
    fn big_h_closed(&self, _z: f64, _y0: f64) -> Option<f64> {
        None
    }

    /// `h(z) = g(z) / V(G(z))` when it can be evaluated more stably than the ratio.
    fn h_closed(&self, _z: f64) -> Option<f64> {
        None
    }
}

/// Inverse links for binary responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLink {
    Logit,
    Probit,
    Cloglog,
}

impl BinaryLink {
    /// `(ln G(z), ln(1 - G(z)))` evaluated without forming `1 - G`.
    fn log_probs(self, z: f64) -> (f64, f64) {
        match self {
            BinaryLink::Logit => (-softplus(-z), -softplus(z)),
            BinaryLink::Probit => {
                let lower = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
                let upper = 0.5 * erfc(z / std::f64::consts::SQRT_2);
                (lower.ln(), upper.ln())
            }
            BinaryLink::Cloglog => {
                let e = z.exp();
                ((-(-e).exp_m1()).ln(), -e)
            }
        }
    }

    fn probs(self, z: f64) -> (f64, f64) {
        match self {
            BinaryLink::Logit => (logistic(z), logistic(-z)),
            BinaryLink::Probit => (
                0.5 * erfc(-z / std::f64::consts::SQRT_2),
                0.5 * erfc(z / std::f64::consts::SQRT_2),
            ),
            BinaryLink::Cloglog => {
                let e = z.exp();
                (-(-e).exp_m1(), (-e).exp())
            }
        }
    }

    fn density(self, z: f64) -> f64 {
        match self {
            BinaryLink::Logit => {
                let (p, q) = self.probs(z);
                p * q
            }
            BinaryLink::Probit => (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            BinaryLink::Cloglog => (z - z.exp()).exp(),
        }
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `e^z / (1 + e^z)`.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn xlogx_ratio(a: f64, b: f64) -> f64 {
    // a ln(a / b) with 0 ln 0 = 0
    if a == 0.0 {
        0.0
    } else {
        a * (a / b).ln()
    }
}

fn xlogx(a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * a.ln()
    }
}

/// Least squares: `V = 1`, identity link.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianModel;

impl QuasiModel for GaussianModel {
    fn name(&self) -> &'static str {
        "gaussian"
    }
    fn variance(&self, _mu: f64) -> f64 {
        1.0
    }
    fn inverse_link(&self, z: f64) -> f64 {
        z
    }
    fn link_derivative(&self, _z: f64) -> f64 {
        1.0
    }
    fn mean_domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
    fn loss_closed(&self, y: f64, z: f64) -> Option<f64> {
        Some(0.5 * (y - z) * (y - z))
    }
    fn canonical_link_closed(&self, mu: f64, y0: f64) -> Option<f64> {
        Some(mu - y0)
    }
    fn big_h_closed(&self, z: f64, y0: f64) -> Option<f64> {
        Some(z - y0)
    }
    fn regret_closed(&self, mu: f64, mu0: f64) -> Option<f64> {
        Some(0.5 * (mu - mu0) * (mu - mu0))
    }
    fn h_closed(&self, _z: f64) -> Option<f64> {
        Some(1.0)
    }
}

/// Binary response: `V(u) = u(1 - u)` with a choice of inverse link.
#[derive(Debug, Clone, Copy)]
pub struct BernoulliModel {
    pub link: BinaryLink,
}

impl QuasiModel for BernoulliModel {
    fn name(&self) -> &'static str {
        match self.link {
            BinaryLink::Logit => "logistic",
            BinaryLink::Probit => "probit",
            BinaryLink::Cloglog => "cloglog",
        }
    }
    fn variance(&self, mu: f64) -> f64 {
        mu * (1.0 - mu)
    }
    fn inverse_link(&self, z: f64) -> f64 {
        self.link.probs(z).0
    }
    fn link_derivative(&self, z: f64) -> f64 {
        self.link.density(z)
    }
    fn mean_domain(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn response_domain(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn variance_at(&self, z: f64) -> f64 {
        let (p, q) = self.link.probs(z);
        p * q
    }
    fn loss_closed(&self, y: f64, z: f64) -> Option<f64> {
        // -Q(y, G(z)) = -y ln G - (1-y) ln(1-G) + y ln y + (1-y) ln(1-y)
        let (lp, lq) = self.link.log_probs(z);
        let fit = match self.link {
            // softplus form is exact for the canonical link
            BinaryLink::Logit => softplus(z) - y * z,
            _ => {
                let a = if y == 0.0 { 0.0 } else { -y * lp };
                let b = if y == 1.0 { 0.0 } else { -(1.0 - y) * lq };
                a + b
            }
        };
        Some(fit + xlogx(y) + xlogx(1.0 - y))
    }
    fn canonical_link_closed(&self, mu: f64, y0: f64) -> Option<f64> {
        let logit = |u: f64| u.ln() - (-u).ln_1p();
        Some(logit(mu) - logit(y0))
    }
    fn big_h_closed(&self, z: f64, y0: f64) -> Option<f64> {
        let logit_y0 = y0.ln() - (-y0).ln_1p();
        let h = match self.link {
            BinaryLink::Logit => z,
            _ => {
                let (lp, lq) = self.link.log_probs(z);
                lp - lq
            }
        };
        Some(if logit_y0 == 0.0 { h } else { h - logit_y0 })
    }
    fn regret_closed(&self, mu: f64, mu0: f64) -> Option<f64> {
        Some(xlogx_ratio(mu0, mu) + xlogx_ratio(1.0 - mu0, 1.0 - mu))
    }
    fn h_closed(&self, z: f64) -> Option<f64> {
        match self.link {
            BinaryLink::Logit => Some(1.0),
            _ => {
                let (p, q) = self.link.probs(z);
                Some(self.link.density(z) / (p * q))
            }
        }
    }
}

/// A quasi-likelihood loss family: model plus the base point `y0` of `gamma`.
#[derive(Debug, Clone)]
pub struct QuasiFamily {
    model: Arc<dyn QuasiModel>,
    y0: f64,
}

impl QuasiFamily {
    pub fn new(model: Arc<dyn QuasiModel>, y0: f64) -> Result<Self> {
        let (lo, hi) = model.mean_domain();
        if !(y0 > lo && y0 < hi) {
            return Err(Error::InvalidParameter(format!(
                "reference point y0 = {y0} must lie inside ({lo}, {hi})"
            )));
        }
        Ok(QuasiFamily { model, y0 })
    }

    pub fn gaussian() -> Self {
        QuasiFamily { model: Arc::new(GaussianModel), y0: 0.0 }
    }

    pub fn logistic() -> Self {
        QuasiFamily::binary(BinaryLink::Logit)
    }

    pub fn binary(link: BinaryLink) -> Self {
        QuasiFamily { model: Arc::new(BernoulliModel { link }), y0: 0.5 }
    }

    /// Same model, different base point for `gamma`.
    pub fn with_reference_point(&self, y0: f64) -> Result<Self> {
        QuasiFamily::new(self.model.clone(), y0)
    }

    pub fn name(&self) -> &'static str {
        self.model.name()
    }

    pub fn model(&self) -> &dyn QuasiModel {
        self.model.as_ref()
    }

    pub fn reference_point(&self) -> f64 {
        self.y0
    }

    pub fn mean_domain(&self) -> (f64, f64) {
        self.model.mean_domain()
    }

    fn check_mean(&self, mu: f64) -> Result<()> {
        let (lower, upper) = self.model.mean_domain();
        if mu > lower && mu < upper {
            Ok(())
        } else {
            Err(Error::DomainViolation { mean: mu, lower, upper })
        }
    }

    pub fn check_response(&self, y: f64) -> Result<()> {
        let (lower, upper) = self.model.response_domain();
        if y.is_finite() && y >= lower && y <= upper {
            Ok(())
        } else {
            Err(Error::DomainViolation { mean: y, lower, upper })
        }
    }

    /// `V(u)`, checked positive.
    pub fn variance(&self, mu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        let v = self.model.variance(mu);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::ConditionFailure {
                condition: "V > 0".into(),
                detail: format!("V({mu}) = {v}"),
            })
        }
    }

    pub fn inverse_link(&self, z: f64) -> f64 {
        self.model.inverse_link(z)
    }

    pub fn link_derivative(&self, z: f64) -> f64 {
        self.model.link_derivative(z)
    }

    /// `V(G(z))`.
    pub fn variance_at(&self, z: f64) -> f64 {
        self.model.variance_at(z)
    }

    /// `h(z) = g(z) / V(G(z))`.
    pub fn h(&self, z: f64) -> Result<f64> {
        let value = match self.model.h_closed(z) {
            Some(v) => v,
            None => self.model.link_derivative(z) / self.model.variance_at(z),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            let (lower, upper) = self.model.mean_domain();
            Err(Error::DomainViolation { mean: self.inverse_link(z), lower, upper })
        }
    }

    /// `gamma(mu) = int_{y0}^{mu} 1/V(u) du`.
    pub fn gamma(&self, mu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        match self.model.canonical_link_closed(mu, self.y0) {
            Some(v) => Ok(v),
            None => self.gamma_by_quadrature(mu),
        }
    }

    pub fn gamma_by_quadrature(&self, mu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        adaptive_simpson(|u| 1.0 / self.model.variance(u), self.y0, mu, QUADRATURE_TOL)
    }

    /// `H(z) = gamma(G(z))`.
    pub fn big_h(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::InvalidParameter(format!("linear predictor {z} is not finite")));
        }
        match self.model.big_h_closed(z, self.y0) {
            Some(v) => Ok(v),
            None => self.gamma(self.inverse_link(z)),
        }
    }

    /// `Q(y, mu) = int_y^mu (y - u)/V(u) du`, always by quadrature.
    pub fn quasi_likelihood_by_quadrature(&self, y: f64, mu: f64) -> Result<f64> {
        self.check_response(y)?;
        self.check_mean(mu)?;
        adaptive_simpson(|u| (y - u) / self.model.variance(u), y, mu, QUADRATURE_TOL)
    }

    /// `rho(y, z) = -Q(y, G(z))`.
    pub fn loss(&self, y: f64, z: f64) -> Result<f64> {
        self.check_response(y)?;
        match self.model.loss_closed(y, z) {
            Some(v) if v.is_finite() => Ok(v),
            Some(_) => {
                let (lower, upper) = self.model.mean_domain();
                Err(Error::DomainViolation { mean: self.inverse_link(z), lower, upper })
            }
            None => self.loss_by_quadrature(y, z),
        }
    }

    pub fn loss_by_quadrature(&self, y: f64, z: f64) -> Result<f64> {
        self.quasi_likelihood_by_quadrature(y, self.inverse_link(z)).map(|q| -q)
    }

    /// `d rho / dz = -(y - G(z)) h(z)`.
    pub fn loss_derivative(&self, y: f64, z: f64) -> Result<f64> {
        self.check_response(y)?;
        Ok(-(y - self.inverse_link(z)) * self.h(z)?)
    }

    /// Expected curvature `g(z) h(z)`; the exact second derivative for canonical links.
    pub fn fisher_weight(&self, z: f64) -> Result<f64> {
        Ok(self.link_derivative(z) * self.h(z)?)
    }

    /// Regret `B(mu, mu0) = int_{mu0}^{mu} (u - mu0)/V(u) du`.
    pub fn regret(&self, mu: f64, mu0: f64) -> Result<f64> {
        self.check_mean(mu)?;
        self.check_mean(mu0)?;
        match self.model.regret_closed(mu, mu0) {
            Some(v) => Ok(v),
            None => self.regret_by_quadrature(mu, mu0),
        }
    }

    pub fn regret_by_quadrature(&self, mu: f64, mu0: f64) -> Result<f64> {
        self.check_mean(mu)?;
        self.check_mean(mu0)?;
        adaptive_simpson(|u| (u - mu0) / self.model.variance(u), mu0, mu, QUADRATURE_TOL)
    }

    /// Mean of per-coordinate regrets.
    pub fn average_regret(&self, mu: &[f64], mu0: &[f64]) -> Result<f64> {
        if mu.len() != mu0.len() {
            return Err(Error::ShapeMismatch(format!(
                "average_regret: {} means vs {} reference means",
                mu.len(),
                mu0.len()
            )));
        }
        if mu.is_empty() {
            return Err(Error::InvalidParameter("average_regret of an empty vector".into()));
        }
        let total = mu
            .iter()
            .zip(mu0)
            .map(|(&m, &m0)| self.regret(m, m0))
            .sum::<Result<f64>>()?;
        Ok(total / mu.len() as f64)
    }
}
