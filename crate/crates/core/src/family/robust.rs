//! Robust (Lipschitz in the linear predictor) losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::quasi::{logistic, softplus};

/// The shape of a robust loss, before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RobustKind {
    /// Check loss `alpha u 1{u > 0} + (1 - alpha)|u| 1{u <= 0}` with `u = y - z`.
    Quantile { alpha: f64 },
    /// `|y - z|`.
    Lad,
    /// Huber loss with threshold `k` on the residual.
    Huber { k: f64 },
    /// `log(1 + e^z) - y z` for `y` in `{0, 1}`.
    Logistic,
}

/// One element of the subdifferential of `z -> rho(y, z)` plus the interval
/// it came from. For smooth points `lower == upper == selection`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subgradient {
    pub selection: f64,
    pub lower: f64,
    pub upper: f64,
    pub at_kink: bool,
}

impl Subgradient {
    fn smooth(d: f64) -> Self {
        Subgradient { selection: d, lower: d, upper: d, at_kink: false }
    }

    fn kink(lower: f64, upper: f64) -> Self {
        Subgradient { selection: 0.5 * (lower + upper), lower, upper, at_kink: true }
    }
}

/// A robust loss `scale * rho_kind(y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustLoss {
    kind: RobustKind,
    scale: f64,
}

impl RobustLoss {
    pub fn new(kind: RobustKind) -> Result<Self> {
        match kind {
            RobustKind::Quantile { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                return Err(Error::InvalidParameter(format!(
                    "quantile level must satisfy 0 < alpha < 1, got {alpha}"
                )))
            }
            RobustKind::Huber { k } if !(k > 0.0 && k.is_finite()) => {
                return Err(Error::InvalidParameter(format!("huber threshold must be > 0, got {k}")))
            }
            _ => {}
        }
        Ok(RobustLoss { kind, scale: 1.0 })
    }

    pub fn quantile(alpha: f64) -> Result<Self> {
        RobustLoss::new(RobustKind::Quantile { alpha })
    }

    pub fn lad() -> Self {
        RobustLoss { kind: RobustKind::Lad, scale: 1.0 }
    }

    pub fn huber(k: f64) -> Result<Self> {
        RobustLoss::new(RobustKind::Huber { k })
    }

    pub fn logistic() -> Self {
        RobustLoss { kind: RobustKind::Logistic, scale: 1.0 }
    }

    pub fn kind(&self) -> RobustKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            RobustKind::Quantile { .. } => "quantile",
            RobustKind::Lad => "lad",
            RobustKind::Huber { .. } => "huber",
            RobustKind::Logistic => "logistic",
        }
    }

    fn raw_lipschitz(&self) -> f64 {
        match self.kind {
            RobustKind::Quantile { alpha } => alpha.max(1.0 - alpha),
            RobustKind::Lad | RobustKind::Logistic => 1.0,
            RobustKind::Huber { k } => k,
        }
    }

    /// Lipschitz constant of `z -> rho(y, z)`, uniform in `y`.
    pub fn lipschitz_constant(&self) -> f64 {
        self.scale * self.raw_lipschitz()
    }

    /// Robust in the strict sense: Lipschitz constant at most one.
    pub fn is_robust(&self) -> bool {
        self.lipschitz_constant() <= 1.0
    }

    /// Rescaled so the Lipschitz constant is exactly one.
    pub fn normalized(&self) -> Self {
        RobustLoss { kind: self.kind, scale: 1.0 / self.raw_lipschitz() }
    }

    /// Nonsmooth losses are solved through Moreau-Yosida smoothing.
    pub fn is_smooth(&self) -> bool {
        matches!(self.kind, RobustKind::Huber { .. } | RobustKind::Logistic)
    }

    pub fn check_response(&self, y: f64) -> Result<()> {
        let ok = match self.kind {
            RobustKind::Logistic => y == 0.0 || y == 1.0,
            _ => y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            let (lower, upper) = match self.kind {
                RobustKind::Logistic => (0.0, 1.0),
                _ => (f64::NEG_INFINITY, f64::INFINITY),
            };
            Err(Error::DomainViolation { mean: y, lower, upper })
        }
    }

    /// Slopes of the piecewise-linear losses: `(p, q)` with
    /// `rho = p u` for `u > 0` and `rho = -q u` for `u <= 0`, `u = y - z`.
    fn slopes(&self) -> Option<(f64, f64)> {
        match self.kind {
            RobustKind::Quantile { alpha } => Some((self.scale * alpha, self.scale * (1.0 - alpha))),
            RobustKind::Lad => Some((self.scale, self.scale)),
            _ => None,
        }
    }

    pub fn loss(&self, y: f64, z: f64) -> f64 {
        let u = y - z;
        match self.kind {
            RobustKind::Quantile { .. } | RobustKind::Lad => {
                let (p, q) = self.slopes().unwrap();
                if u > 0.0 {
                    p * u
                } else {
                    -q * u
                }
            }
            RobustKind::Huber { k } => {
                let a = u.abs();
                self.scale * if a <= k { 0.5 * u * u } else { k * a - 0.5 * k * k }
            }
            RobustKind::Logistic => self.scale * (softplus(z) - y * z),
        }
    }

    /// Subgradient in `z`; at kinks the selection is the midpoint of the interval.
    pub fn subgradient(&self, y: f64, z: f64) -> Subgradient {
        let u = y - z;
        match self.kind {
            RobustKind::Quantile { .. } | RobustKind::Lad => {
                let (p, q) = self.slopes().unwrap();
                if u > 0.0 {
                    Subgradient::smooth(-p)
                } else if u < 0.0 {
                    Subgradient::smooth(q)
                } else {
                    Subgradient::kink(-p, q)
                }
            }
            RobustKind::Huber { k } => Subgradient::smooth(-self.scale * u.clamp(-k, k)),
            RobustKind::Logistic => Subgradient::smooth(self.scale * (logistic(z) - y)),
        }
    }

    /// Second derivative where it exists; `None` for the piecewise-linear losses.
    pub fn second_derivative(&self, y: f64, z: f64) -> Option<f64> {
        match self.kind {
            RobustKind::Huber { k } => Some(if (y - z).abs() <= k { self.scale } else { 0.0 }),
            RobustKind::Logistic => Some(self.scale * logistic(z) * logistic(-z)),
            _ => None,
        }
    }

    /// Moreau-Yosida envelope with parameter `mu` of a piecewise-linear loss.
    /// Smooth losses are returned unchanged.
    pub fn smoothed(&self, mu: f64) -> SmoothedLoss {
        SmoothedLoss { base: *self, mu }
    }
}

/// The Moreau-Yosida envelope `min_v rho(y, v) + (z - v)^2 / (2 mu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedLoss {
    base: RobustLoss,
    mu: f64,
}

impl SmoothedLoss {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn base(&self) -> &RobustLoss {
        &self.base
    }

    pub fn value(&self, y: f64, z: f64) -> f64 {
        match self.base.slopes() {
            None => self.base.loss(y, z),
            Some((p, q)) => {
                let u = y - z;
                let mu = self.mu;
                if u > p * mu {
                    p * u - 0.5 * p * p * mu
                } else if u < -q * mu {
                    -q * u - 0.5 * q * q * mu
                } else {
                    0.5 * u * u / mu
                }
            }
        }
    }

    pub fn derivative(&self, y: f64, z: f64) -> f64 {
        match self.base.slopes() {
            None => self.base.subgradient(y, z).selection,
            Some((p, q)) => -((y - z) / self.mu).clamp(-q, p),
        }
    }

    pub fn second_derivative(&self, y: f64, z: f64) -> f64 {
        match self.base.slopes() {
            None => self.base.second_derivative(y, z).unwrap_or(0.0),
            Some((p, q)) => {
                let u = y - z;
                if u <= p * self.mu && u >= -q * self.mu {
                    1.0 / self.mu
                } else {
                    0.0
                }
            }
        }
    }

    /// Global bound on the second derivative.
    pub fn curvature_bound(&self) -> f64 {
        match self.base.kind {
            RobustKind::Quantile { .. } | RobustKind::Lad => 1.0 / self.mu,
            RobustKind::Huber { .. } => self.base.scale,
            RobustKind::Logistic => 0.25 * self.base.scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_validation() {
        assert!(RobustLoss::quantile(0.0).is_err());
        assert!(RobustLoss::quantile(1.0).is_err());
        assert!(RobustLoss::huber(0.0).is_err());
        assert!(RobustLoss::huber(f64::NAN).is_err());
        assert!(RobustLoss::quantile(0.3).is_ok());
    }

    #[test]
    fn median_check_loss_is_half_absolute() {
        let q = RobustLoss::quantile(0.5).unwrap();
        let lad = RobustLoss::lad();
        for (y, z) in [(1.0, -2.0), (0.0, 0.0), (-0.5, 3.25)] {
            assert_eq!(q.loss(y, z), 0.5 * (y - z).abs());
            assert_eq!(q.loss(y, z), 0.5 * lad.loss(y, z));
        }
    }

    #[test]
    fn quantile_slopes() {
        let alpha = 0.3;
        let q = RobustLoss::quantile(alpha).unwrap();
        assert_eq!(q.subgradient(1.0, 0.0).selection, -alpha);
        assert_eq!(q.subgradient(-1.0, 0.0).selection, 1.0 - alpha);
        let k = q.subgradient(0.5, 0.5);
        assert!(k.at_kink);
        assert_eq!((k.lower, k.upper), (-alpha, 1.0 - alpha));
        assert!((k.selection - (0.5 - alpha)).abs() < 1e-15);
    }

    #[test]
    fn lad_kink_midpoint_is_zero() {
        let s = RobustLoss::lad().subgradient(2.0, 2.0);
        assert_eq!(s.selection, 0.0);
        assert_eq!((s.lower, s.upper), (-1.0, 1.0));
    }

    #[test]
    fn huber_normalization() {
        let h = RobustLoss::huber(2.5).unwrap();
        assert!(!h.is_robust());
        let n = h.normalized();
        assert!((n.lipschitz_constant() - 1.0).abs() < 1e-15);
        assert!(n.is_robust());
        assert!(RobustLoss::huber(0.8).unwrap().is_robust());
    }

    #[test]
    fn smoothing_converges_to_base() {
        let q = RobustLoss::quantile(0.25).unwrap();
        for mu in [1e-2, 1e-4, 1e-8] {
            let s = q.smoothed(mu);
            for (y, z) in [(1.0, 0.0), (0.0, 0.3), (0.2, 0.2)] {
                let gap = q.loss(y, z) - s.value(y, z);
                // envelope lies below and within max(p, q)^2 mu / 2
                assert!(gap >= -1e-15 && gap <= 0.5 * 0.75 * 0.75 * mu + 1e-15);
            }
        }
    }

    #[test]
    fn smoothed_derivative_matches_differences() {
        let s = RobustLoss::lad().smoothed(0.1);
        for (y, z) in [(0.0, 0.03), (0.0, -0.5), (1.0, 1.2)] {
            let h = 1e-6;
            let fd = (s.value(y, z + h) - s.value(y, z - h)) / (2.0 * h);
            assert!((fd - s.derivative(y, z)).abs() < 1e-6);
        }
    }
}
