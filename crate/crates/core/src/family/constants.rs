//! Grid estimates of the regularity constants on `|z| <= K_X + K_0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::quasi::{logistic, QuasiFamily};
use crate::family::robust::{RobustKind, RobustLoss};
use crate::quadrature::adaptive_simpson;

pub const MIN_GRID_POINTS: usize = 64;

/// Bounds on `h`, `V o G`, and the Lipschitz constants of `h` and `g`, plus
/// the curvature constant `C_l` for robust losses when it was estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionConstants {
    pub c_h: f64,
    pub c_v: f64,
    pub l_h: f64,
    pub l_g: f64,
    pub c_l: Option<f64>,
    pub interval_radius: f64,
    pub grid_points: usize,
}

fn grid(radius: f64, points: usize) -> Vec<f64> {
    if radius == 0.0 {
        return vec![0.0];
    }
    let step = 2.0 * radius / (points - 1) as f64;
    (0..points).map(|k| -radius + step * k as f64).collect()
}

fn check_grid_args(k_x: f64, k_0: f64, grid_points: usize) -> Result<f64> {
    if grid_points < MIN_GRID_POINTS {
        return Err(Error::InvalidParameter(format!(
            "grid_points must be at least {MIN_GRID_POINTS}, got {grid_points}"
        )));
    }
    if !(k_x >= 0.0 && k_0 >= 0.0 && (k_x + k_0).is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "K_X and K_0 must be finite and nonnegative (got {k_x}, {k_0})"
        )));
    }
    Ok(k_x + k_0)
}

fn max_difference_quotient(z: &[f64], values: &[f64]) -> f64 {
    z.windows(2)
        .zip(values.windows(2))
        .map(|(zw, vw)| (vw[1] - vw[0]).abs() / (zw[1] - zw[0]))
        .fold(0.0, f64::max)
}

/// Estimates `C_h`, `C_V`, `L_h`, `L_g` on a uniform grid over `[-(K_X+K_0), K_X+K_0]`.
///
/// `C_h = max(sup h, 1/inf h)` and `C_V = max(2 sup VoG, 2/inf VoG)`, so both
/// sides of each two-sided bound hold on the grid. The Lipschitz constants
/// are the largest adjacent difference quotients (`L_g` carries the factor 2
/// of its defining inequality). A vanishing `h` or `VoG` is reported as a
/// condition failure.
pub fn estimate_condition_constants(
    family: &QuasiFamily,
    k_x: f64,
    k_0: f64,
    grid_points: usize,
) -> Result<ConditionConstants> {
    let radius = check_grid_args(k_x, k_0, grid_points)?;
    let z = grid(radius, grid_points);
    let h = z.iter().map(|&zi| family.h(zi)).collect::<Result<Vec<_>>>()?;
    let v: Vec<f64> = z.iter().map(|&zi| family.variance_at(zi)).collect();
    let g: Vec<f64> = z.iter().map(|&zi| family.link_derivative(zi)).collect();

    let (h_min, h_max) = min_max(&h);
    if !(h_min > 0.0) {
        return Err(Error::ConditionFailure {
            condition: "A3".into(),
            detail: format!("inf h = {h_min} on |z| <= {radius}"),
        });
    }
    let (v_min, v_max) = min_max(&v);
    if !(v_min > 0.0) {
        return Err(Error::ConditionFailure {
            condition: "A4".into(),
            detail: format!("inf VoG = {v_min} on |z| <= {radius}"),
        });
    }
    let c_h = h_max.max(1.0 / h_min);
    let c_v = (2.0 * v_max).max(2.0 / v_min);
    let l_h = max_difference_quotient(&z, &h);
    let l_g = 2.0 * max_difference_quotient(&z, &g);
    for (name, value) in [("C_h", c_h), ("C_V", c_v), ("L_h", l_h), ("L_g", l_g)] {
        if !value.is_finite() {
            return Err(Error::ConditionFailure {
                condition: name.into(),
                detail: "constant is infinite on the grid".into(),
            });
        }
    }
    Ok(ConditionConstants {
        c_h,
        c_v,
        l_h,
        l_g,
        c_l: None,
        interval_radius: radius,
        grid_points,
    })
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        if v.is_nan() {
            (f64::NAN, f64::NAN)
        } else {
            (lo.min(v), hi.max(v))
        }
    })
}

/// Conditional law of `Y_i` given the location `f_i^0` of observation `i`.
pub enum ConditionalLaw<'a> {
    /// `Y = f + eps` where `eps` has `density` supported on `[lower, upper]`.
    Additive {
        density: &'a (dyn Fn(f64) -> f64 + Sync),
        lower: f64,
        upper: f64,
    },
    /// `Y ~ Bernoulli(G(f))` with the logistic `G`.
    BernoulliLogistic,
}

impl ConditionalLaw<'_> {
    /// `l'(z) = E[d rho(Y, z)/dz]` at location `f`.
    fn expected_derivative(&self, loss: &RobustLoss, f: f64, z: f64) -> Result<f64> {
        match self {
            ConditionalLaw::BernoulliLogistic => {
                if loss.kind() != RobustKind::Logistic {
                    return Err(Error::InvalidParameter(
                        "a Bernoulli law only pairs with the logistic loss".into(),
                    ));
                }
                Ok(loss.scale() * (logistic(z) - logistic(f)))
            }
            ConditionalLaw::Additive { density, lower, upper } => {
                // integrand is smooth between the kinks of eps -> rho'(f + eps, z)
                let mut cuts = vec![*lower, *upper];
                let kink = z - f;
                match loss.kind() {
                    RobustKind::Quantile { .. } | RobustKind::Lad => cuts.push(kink),
                    RobustKind::Huber { k } => {
                        cuts.push(kink - k);
                        cuts.push(kink + k);
                    }
                    RobustKind::Logistic => {
                        return Err(Error::InvalidParameter(
                            "the logistic loss needs a Bernoulli law".into(),
                        ))
                    }
                }
                cuts.retain(|c| *c >= *lower && *c <= *upper);
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                let mut total = 0.0;
                for w in cuts.windows(2) {
                    let mid = 0.5 * (w[0] + w[1]);
                    // piecewise-linear losses have a constant slope on each piece;
                    // evaluating at the midpoint gives the one-sided limits at the ends
                    let piecewise = !loss.is_smooth();
                    let integrand = |eps: f64| {
                        let y = f + if piecewise { mid } else { eps };
                        loss.subgradient(y, z).selection * density(eps)
                    };
                    total += adaptive_simpson(integrand, w[0], w[1], 1e-12)?;
                }
                Ok(total)
            }
        }
    }
}

/// Estimates `C_l` with `inf_{|z| <= K_X + K_0} l_i''(z) >= 2 / C_l` over the
/// supplied locations `f_i^0`, where `l_i(z) = E[rho(Y_i, z) | x_i]`.
///
/// `l_i''` is a central difference of `l_i'`, and `l_i'` is integrated
/// against the conditional law.
pub fn estimate_condition_b(
    loss: &RobustLoss,
    law: &ConditionalLaw<'_>,
    locations: &[f64],
    k_x: f64,
    k_0: f64,
    grid_points: usize,
) -> Result<f64> {
    let radius = check_grid_args(k_x, k_0, grid_points)?;
    if locations.is_empty() {
        return Err(Error::InvalidParameter("condition B needs at least one location".into()));
    }
    let mut distinct: Vec<f64> = locations.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let step = 1e-4 * radius.max(1.0);
    let mut inf_curvature = f64::INFINITY;
    for &f in &distinct {
        for z in grid(radius, grid_points) {
            let up = law.expected_derivative(loss, f, z + step)?;
            let down = law.expected_derivative(loss, f, z - step)?;
            inf_curvature = inf_curvature.min((up - down) / (2.0 * step));
        }
    }
    if !(inf_curvature > 0.0) {
        return Err(Error::ConditionFailure {
            condition: "B".into(),
            detail: format!("inf l'' = {inf_curvature:e} on |z| <= {radius}"),
        });
    }
    Ok(2.0 / inf_curvature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::quasi::BinaryLink;

    #[test]
    fn logistic_canonical_ch_is_one() {
        for r in [0.5, 2.0, 7.0] {
            let c = estimate_condition_constants(&QuasiFamily::logistic(), r, 0.0, 128).unwrap();
            assert_eq!(c.c_h, 1.0);
            assert_eq!(c.l_h, 0.0);
            // V o G peaks at 1/4 and bottoms out at the edge of the interval
            let edge = logistic(r) * logistic(-r);
            assert!((c.c_v - 2.0 / edge).abs() < 1e-9 * c.c_v);
            // sup |g'| = 1/(6 sqrt 3); L_g doubles it
            if r > 1.4 {
                let exact = 2.0 / (6.0 * 3f64.sqrt());
                assert!((c.l_g - exact).abs() < 2e-3, "{}", c.l_g);
            }
        }
    }

    #[test]
    fn gaussian_constants() {
        let c = estimate_condition_constants(&QuasiFamily::gaussian(), 1.0, 2.0, 64).unwrap();
        assert_eq!(c.c_v, 2.0);
        assert_eq!(c.c_h, 1.0);
        assert_eq!(c.l_h, 0.0);
        assert_eq!(c.l_g, 0.0);
        assert_eq!(c.interval_radius, 3.0);
    }

    #[test]
    fn probit_has_nonconstant_h() {
        let c = estimate_condition_constants(&QuasiFamily::binary(BinaryLink::Probit), 1.0, 1.0, 256)
            .unwrap();
        assert!(c.c_h > 1.0);
        assert!(c.l_h > 0.0);
    }

    #[test]
    fn grid_and_range_validation() {
        let f = QuasiFamily::gaussian();
        assert!(estimate_condition_constants(&f, 1.0, 1.0, 10).is_err());
        assert!(estimate_condition_constants(&f, -1.0, 1.0, 64).is_err());
    }

    #[test]
    fn vanishing_variance_is_a_condition_failure() {
        // exp(-800) underflows, so VoG vanishes at the edge
        let r = estimate_condition_constants(&QuasiFamily::logistic(), 800.0, 0.0, 64);
        assert!(matches!(r, Err(Error::ConditionFailure { .. })), "{r:?}");
    }

    fn std_normal(e: f64) -> f64 {
        (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn lad_condition_b_matches_density() {
        // l''(z) = 2 phi(z - f); the infimum sits at the far edge of the interval
        let law = ConditionalLaw::Additive { density: &std_normal, lower: -40.0, upper: 40.0 };
        let c_l = estimate_condition_b(&RobustLoss::lad(), &law, &[0.0], 1.0, 0.5, 64).unwrap();
        let exact = 2.0 / (2.0 * std_normal(1.5));
        assert!((c_l - exact).abs() < 1e-5 * exact, "{c_l} vs {exact}");
    }

    #[test]
    fn quantile_condition_b_uses_single_density() {
        let law = ConditionalLaw::Additive { density: &std_normal, lower: -40.0, upper: 40.0 };
        let q = RobustLoss::quantile(0.3).unwrap();
        let c_l = estimate_condition_b(&q, &law, &[0.2, -0.2], 1.0, 0.0, 64).unwrap();
        let exact = 2.0 / std_normal(1.2);
        assert!((c_l - exact).abs() < 1e-5 * exact);
    }

    #[test]
    fn logistic_condition_b() {
        let c_l = estimate_condition_b(
            &RobustLoss::logistic(),
            &ConditionalLaw::BernoulliLogistic,
            &[0.3],
            2.0,
            0.0,
            64,
        )
        .unwrap();
        let exact = 2.0 / (logistic(2.0) * logistic(-2.0));
        assert!((c_l - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn condition_b_fails_outside_support() {
        let uniform = |e: f64| if e.abs() <= 0.5 { 1.0 } else { 0.0 };
        let law = ConditionalLaw::Additive { density: &uniform, lower: -0.5, upper: 0.5 };
        let r = estimate_condition_b(&RobustLoss::lad(), &law, &[0.0], 2.0, 0.0, 64);
        assert!(matches!(r, Err(Error::ConditionFailure { .. })));
    }
}
