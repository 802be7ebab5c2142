use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::config::{Beta0Spec, Covariance, DesignLaw, ErrorLaw, LambdaRule, Magnitude, Placement, ScenarioConfig, Signs};
use crate::design::{
    compatibility_constant_with, CompatibilityMethod, CompatibilityOptions, DesignMatrix, IndexSet,
};
use crate::error::{Error, Result};
use crate::family::{Family, FamilySpec};

/// Stream reserved for a design shared by all replications.
pub const DESIGN_STREAM: u64 = 0;

/// Generator for replication `index`: its own ChaCha stream under `master_seed`,
/// so results do not depend on the order replications run in.
pub fn replication_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn design_rng(master_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(DESIGN_STREAM);
    rng
}

/// A generated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub design: DesignMatrix,
    pub beta0: Vec<f64>,
    pub response: Vec<f64>,
    /// `eps_i = Y_i - mu0_i`.
    pub noise: Vec<f64>,
    /// `max_i |x_i^T beta0|`.
    pub k_0: f64,
    /// Error moment constants of the law that generated `noise`.
    pub sigma: f64,
    pub kappa: f64,
    /// `Gamma_eff(S0)` when the magnitudes needed it.
    pub gamma_eff: Option<GammaEff>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaEff {
    pub value: f64,
    /// False when `s0` exceeded the exact-enumeration cap.
    pub exact: bool,
}

/// `s0 / phi^2(3, S0)`, exact up to `s_max` and by projected search beyond.
pub fn gamma_eff(design: &DesignMatrix, support: &IndexSet, s_max: usize) -> Result<GammaEff> {
    let options = CompatibilityOptions { s_max, ..CompatibilityOptions::default() };
    let result = compatibility_constant_with(design, support, 3.0, &options)?;
    let scale = design.column_norms().iter().fold(0.0_f64, |m, c| m.max(c * c));
    if !(result.phi_sq > 1e-12 * support.len() as f64 * scale) {
        return Err(Error::CompatibilityFails { phi_sq: result.phi_sq });
    }
    Ok(GammaEff {
        value: support.len() as f64 / result.phi_sq,
        exact: result.method == CompatibilityMethod::ExactQpEnumeration,
    })
}

fn covariance_factor(cov: &Covariance, p: usize) -> Result<Option<DMatrix<f64>>> {
    let sigma = match cov {
        Covariance::Identity => return Ok(None),
        Covariance::Toeplitz { rho } => DMatrix::from_fn(p, p, |j, k| rho.powi((j as i32 - k as i32).abs())),
        Covariance::Equicorrelated { rho } => DMatrix::from_fn(p, p, |j, k| if j == k { 1.0 } else { *rho }),
        Covariance::Matrix { rows } => DMatrix::from_fn(p, p, |j, k| rows[j][k]),
    };
    let chol = sigma
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("design covariance is not positive definite".into()))?;
    Ok(Some(chol.l()))
}

fn draw_design(law: &DesignLaw, n: usize, p: usize, rng: &mut ChaCha8Rng) -> Result<DesignMatrix> {
    match law {
        DesignLaw::Fixed { rows } => DesignMatrix::from_rows(rows),
        DesignLaw::Gaussian { covariance, .. } => {
            let factor = covariance_factor(covariance, p)?;
            let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = match factor {
                None => z,
                Some(l) => z * l.transpose(),
            };
            DesignMatrix::new(x)
        }
        DesignLaw::Uniform { k_x, .. } => DesignMatrix::new(DMatrix::from_fn(n, p, |_, _| rng.random_range(-k_x..=*k_x))),
    }
}

/// The design of a scenario whose design is not redrawn.
pub fn shared_design(config: &ScenarioConfig) -> Result<Option<DesignMatrix>> {
    if config.design.redraws() {
        return Ok(None);
    }
    let mut rng = design_rng(config.master_seed);
    draw_design(&config.design, config.n, config.p, &mut rng).map(Some)
}

/// `lambda` for rules that do not depend on the noise.
pub(crate) fn plain_lambda(rule: &LambdaRule, n: usize, p: usize) -> Option<f64> {
    match *rule {
        LambdaRule::Fixed { value } => Some(value),
        LambdaRule::SqrtLogPOverN { c } => Some(c * ((p as f64).ln() / n as f64).sqrt()),
        _ => None,
    }
}

/// The `alpha`-quantile of the error law, subtracted so that `f0` is the
/// `alpha`-quantile of `Y` for quantile losses.
fn quantile_shift(law: &ErrorLaw, alpha: f64) -> Result<f64> {
    if alpha == 0.5 {
        return Ok(0.0);
    }
    match *law {
        ErrorLaw::Gaussian { sigma } if sigma > 0.0 => {
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Ok(normal.inverse_cdf(alpha))
        }
        ErrorLaw::StudentT { df, sigma } if sigma > 0.0 => {
            let t = StudentsT::new(0.0, student_scale(df, sigma), df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Ok(t.inverse_cdf(alpha))
        }
        _ => Ok(0.0),
    }
}

/// Scale of a t law with `df` degrees of freedom and standard deviation `sigma`.
pub(crate) fn student_scale(df: f64, sigma: f64) -> f64 {
    sigma * ((df - 2.0) / df).sqrt()
}

/// Location shift applied to additive errors for this family.
pub(crate) fn error_shift(config: &ScenarioConfig) -> Result<f64> {
    match config.family {
        FamilySpec::Quantile { alpha } => quantile_shift(&config.error, alpha),
        _ => Ok(0.0),
    }
}

/// Draws `(X, beta0, Y, eps)` for replication `index`.
///
/// `shared` is the design of a scenario that does not redraw it (see
/// [`shared_design`]); it is drawn here when absent.
pub fn generate_instance(config: &ScenarioConfig, index: usize, shared: Option<&DesignMatrix>) -> Result<Instance> {
    config.validate()?;
    let family = config.family()?;
    let mut rng = replication_rng(config.master_seed, index);
    let design = if config.design.redraws() {
        draw_design(&config.design, config.n, config.p, &mut rng)?
    } else if let Some(d) = shared {
        d.clone()
    } else {
        shared_design(config)?.expect("design is shared")
    };
    let (beta0, gamma) = draw_beta0(config, &design, &mut rng)?;
    let f0 = design.predict(&beta0)?;
    let k_0 = f0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let (response, noise, mu) = draw_response(config, &family, f0.as_slice(), &mut rng)?;
    let (sigma, kappa) = config.error.moments(&mu);
    Ok(Instance { design, beta0, response, noise, k_0, sigma, kappa, gamma_eff: gamma })
}

fn draw_beta0(config: &ScenarioConfig, design: &DesignMatrix, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Option<GammaEff>)> {
    let p = config.p;
    match &config.beta0 {
        Beta0Spec::Explicit { values } => Ok((values.clone(), None)),
        Beta0Spec::Sparse { placement, magnitude, signs } => {
            let mut support: Vec<usize> = match placement {
                Placement::Uniform => sample(rng, p, config.s0).into_vec(),
                Placement::First => (0..config.s0).collect(),
            };
            support.sort_unstable();
            let sign_draws: Vec<f64> = support
                .iter()
                .map(|_| match signs {
                    Signs::Positive => 1.0,
                    Signs::Random => {
                        if rng.random_bool(0.5) {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                })
                .collect();
            let (size, gamma) = match magnitude {
                Magnitude::Fixed { value } => (*value, None),
                Magnitude::LambdaGamma { c } => {
                    if support.is_empty() {
                        (0.0, None)
                    } else {
                        let lambda = plain_lambda(&config.lambda, config.n, p).expect("validated lambda rule");
                        let set = IndexSet::new(support.clone(), p)?;
                        let g = gamma_eff(design, &set, config.s_max)?;
                        (c * lambda * g.value, Some(g))
                    }
                }
            };
            let mut beta0 = vec![0.0; p];
            for (&j, s) in support.iter().zip(sign_draws) {
                beta0[j] = s * size;
            }
            Ok((beta0, gamma))
        }
    }
}

/// Returns `(Y, eps, mu0)`.
fn draw_response(
    config: &ScenarioConfig,
    family: &Family,
    f0: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    match config.error {
        ErrorLaw::Model => {
            let q = family.as_quasi().ok_or_else(|| Error::InvalidParameter("model-induced errors need a binary family".into()))?;
            let mu: Vec<f64> = f0.iter().map(|&f| q.inverse_link(f)).collect();
            let y: Vec<f64> = mu.iter().map(|&m| if rng.random::<f64>() < m { 1.0 } else { 0.0 }).collect();
            let eps = y.iter().zip(&mu).map(|(y, m)| y - m).collect();
            Ok((y, eps, mu))
        }
        ErrorLaw::Gaussian { sigma } => {
            let shift = error_shift(config)?;
            let eps: Vec<f64> = f0.iter().map(|_| sigma * rng.sample::<f64, _>(StandardNormal) - shift).collect();
            Ok(additive(family, f0, eps, shift))
        }
        ErrorLaw::StudentT { df, sigma } => {
            let shift = error_shift(config)?;
            let t = StudentT::new(df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let scale = student_scale(df, sigma);
            let eps: Vec<f64> = f0.iter().map(|_| scale * t.sample(rng) - shift).collect();
            Ok(additive(family, f0, eps, shift))
        }
    }
}

/// `Y = f0 + eps`; the mean is `f0 - shift` after a quantile shift.
fn additive(family: &Family, f0: &[f64], eps: Vec<f64>, shift: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let y: Vec<f64> = f0.iter().zip(&eps).map(|(f, e)| f + e).collect();
    let mu: Vec<f64> = f0.iter().map(|f| f - shift).collect();
    let noise = match family {
        Family::Quasi(_) => eps,
        Family::Robust(_) => y.iter().zip(&mu).map(|(y, m)| y - m).collect(),
    };
    (y, noise, mu)
}
