use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{make_family, Family, FamilySpec};

/// Population covariance of i.i.d. gaussian design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Covariance {
    Identity,
    /// `Sigma_jk = rho^|j - k|`.
    Toeplitz { rho: f64 },
    /// `Sigma_jk = rho` off the diagonal.
    Equicorrelated { rho: f64 },
    Matrix { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum DesignLaw {
    /// A given `n x p` matrix, used in every replication.
    Fixed { rows: Vec<Vec<f64>> },
    /// Rows drawn i.i.d. from `N(0, covariance)`. With `redraw = false` the
    /// design is drawn once and shared by all replications.
    Gaussian {
        #[serde(default = "identity")]
        covariance: Covariance,
        #[serde(default = "yes")]
        redraw: bool,
    },
    /// Entries i.i.d. uniform on `[-k_x, k_x]`, so `K_X <= k_x`.
    Uniform {
        k_x: f64,
        #[serde(default = "yes")]
        redraw: bool,
    },
}

fn identity() -> Covariance {
    Covariance::Identity
}

fn yes() -> bool {
    true
}

impl DesignLaw {
    pub fn redraws(&self) -> bool {
        match self {
            DesignLaw::Fixed { .. } => false,
            DesignLaw::Gaussian { redraw, .. } | DesignLaw::Uniform { redraw, .. } => *redraw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Support drawn uniformly at random in every replication.
    Uniform,
    /// Support `{0, ..., s0 - 1}`.
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signs {
    Positive,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Magnitude {
    Fixed { value: f64 },
    /// `c * lambda * Gamma_eff(S0)`; needs a lambda rule that does not look at the noise.
    LambdaGamma { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Beta0Spec {
    Sparse {
        #[serde(default = "uniform_placement")]
        placement: Placement,
        magnitude: Magnitude,
        #[serde(default = "positive")]
        signs: Signs,
    },
    /// A full coefficient vector; `s0` must equal its support size.
    Explicit { values: Vec<f64> },
}

fn uniform_placement() -> Placement {
    Placement::Uniform
}

fn positive() -> Signs {
    Signs::Positive
}

impl Default for Beta0Spec {
    fn default() -> Self {
        Beta0Spec::Sparse { placement: Placement::Uniform, magnitude: Magnitude::LambdaGamma { c: 2.0 }, signs: Signs::Positive }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorLaw {
    Gaussian { sigma: f64 },
    /// Student t with `df >= 5`, rescaled to standard deviation `sigma`.
    StudentT { df: f64, sigma: f64 },
    /// `Y ~ Bernoulli(G(f0))`; the only law for binary families.
    Model,
}

impl ErrorLaw {
    /// `(sigma, kappa)` with `max E eps^2 <= sigma^2` and mean `Var(eps^2) <= kappa^4`.
    /// For the model-induced law the pair depends on the means `mu`.
    pub fn moments(&self, mu: &[f64]) -> (f64, f64) {
        match *self {
            ErrorLaw::Gaussian { sigma } => (sigma, 2f64.powf(0.25) * sigma),
            ErrorLaw::StudentT { df, sigma } => {
                let k4 = (2.0 * df - 2.0) / (df - 4.0);
                (sigma, k4.powf(0.25) * sigma)
            }
            ErrorLaw::Model => {
                let var = |m: f64| m * (1.0 - m);
                let sigma2 = mu.iter().map(|&m| var(m)).fold(0.0, f64::max);
                let kappa4 = mu.iter().map(|&m| var(m) * (1.0 - 2.0 * m).powi(2)).sum::<f64>() / mu.len().max(1) as f64;
                (sigma2.sqrt(), kappa4.powf(0.25))
            }
        }
    }
}

/// Rules for the library `lambda` (loss `rho` averaged over `n`, plus `lambda ||beta||_1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed { value: f64 },
    /// `c sqrt(log p / n)`.
    SqrtLogPOverN { c: f64 },
    /// `multiplier * lambda_eps(t)`, the robust level for robust families.
    Theory { multiplier: f64 },
    /// `factor * max_j |eps^T X_j| / n + margin`, using the realized noise.
    NoiseEvent { factor: f64, margin: f64 },
}

impl LambdaRule {
    pub fn uses_noise(&self) -> bool {
        matches!(self, LambdaRule::NoiseEvent { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremKind {
    /// Least-squares oracle inequality (deterministic given its event).
    Thm1,
    /// Quasi-likelihood oracle inequality.
    Thm2,
    /// Robust-loss oracle inequality.
    Thm4,
    /// Least-squares selection under the irrepresentable condition (deterministic).
    Thm5,
    /// Quasi-likelihood selection.
    Thm7,
}

impl TheoremKind {
    pub const ALL: [TheoremKind; 5] = [TheoremKind::Thm1, TheoremKind::Thm2, TheoremKind::Thm4, TheoremKind::Thm5, TheoremKind::Thm7];

    pub fn is_deterministic(&self) -> bool {
        matches!(self, TheoremKind::Thm1 | TheoremKind::Thm5)
    }

    pub fn applies_to(&self, family: &Family) -> bool {
        let gaussian = family.as_quasi().is_some_and(|q| q.name() == "gaussian");
        match self {
            TheoremKind::Thm1 | TheoremKind::Thm5 => gaussian,
            TheoremKind::Thm2 | TheoremKind::Thm7 => family.as_quasi().is_some(),
            TheoremKind::Thm4 => family.robust_view().is_some_and(|r| r.is_robust()),
        }
    }
}

fn default_grid_points() -> usize {
    256
}

fn default_s_max() -> usize {
    8
}

/// One simulation scenario, usually read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    pub family: FamilySpec,
    pub design: DesignLaw,
    #[serde(default)]
    pub beta0: Beta0Spec,
    pub error: ErrorLaw,
    pub lambda: LambdaRule,
    /// Confidence parameter; `log n` when absent.
    #[serde(default)]
    pub t: Option<f64>,
    pub replications: usize,
    pub master_seed: u64,
    /// Theorems to check; every applicable one when absent.
    #[serde(default)]
    pub checks: Option<Vec<TheoremKind>>,
    /// Grid size for the family constants.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Largest `s0` for exact compatibility constants; search beyond.
    #[serde(default = "default_s_max")]
    pub s_max: usize,
    /// Scales `eta` in the true-positive count `#{|beta0_j| >= lambda/eta}`.
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
}

fn default_etas() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn t(&self) -> f64 {
        self.t.unwrap_or_else(|| (self.n as f64).ln())
    }

    pub fn family(&self) -> Result<Family> {
        make_family(&self.family)
    }

    /// Checks in the configuration that apply to its family.
    pub fn active_checks(&self) -> Result<Vec<TheoremKind>> {
        let family = self.family()?;
        let mut kinds: Vec<TheoremKind> = match &self.checks {
            Some(k) => k.clone(),
            None => TheoremKind::ALL.to_vec(),
        };
        kinds.sort();
        kinds.dedup();
        Ok(kinds.into_iter().filter(|k| k.applies_to(&family)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        if self.p < 2 {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        if self.s0 > self.p {
            return bad(format!("s0 = {} exceeds p = {}", self.s0, self.p));
        }
        if self.replications < 1 {
            return bad("need at least one replication".into());
        }
        if let Some(t) = self.t {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("t must be nonnegative, got {t}"));
            }
        }
        if self.etas.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("etas must be positive".into());
        }
        let family = self.family()?;
        let binary = matches!(self.family, FamilySpec::Logistic | FamilySpec::BinaryLink { .. });
        match self.error {
            ErrorLaw::Model if !binary => return bad("the model-induced error law is for binary families".into()),
            ErrorLaw::Gaussian { .. } | ErrorLaw::StudentT { .. } if binary => {
                return bad("binary families need the model-induced error law".into())
            }
            ErrorLaw::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return bad(format!("sigma must be nonnegative, got {sigma}"))
            }
            ErrorLaw::StudentT { df, sigma } => {
                if !(df >= 5.0 && df.is_finite()) {
                    return bad(format!("t errors need df >= 5 for a finite fourth moment, got {df}"));
                }
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return bad(format!("sigma must be nonnegative, got {sigma}"));
                }
            }
            _ => {}
        }
        match &self.design {
            DesignLaw::Fixed { rows } => {
                if rows.len() != self.n || rows.iter().any(|r| r.len() != self.p) {
                    return Err(Error::ShapeMismatch(format!("fixed design must be {} x {}", self.n, self.p)));
                }
            }
            DesignLaw::Gaussian { covariance, .. } => match covariance {
                Covariance::Identity => {}
                Covariance::Toeplitz { rho } if !(rho.abs() < 1.0) => return bad(format!("|rho| must be < 1, got {rho}")),
                Covariance::Equicorrelated { rho } if !(*rho > -1.0 / (self.p as f64 - 1.0) && *rho < 1.0) => {
                    return bad(format!("equicorrelation {rho} is not positive definite for p = {}", self.p))
                }
                Covariance::Matrix { rows } if rows.len() != self.p || rows.iter().any(|r| r.len() != self.p) => {
                    return Err(Error::ShapeMismatch(format!("covariance must be {} x {}", self.p, self.p)))
                }
                _ => {}
            },
            DesignLaw::Uniform { k_x, .. } => {
                if !(*k_x > 0.0 && k_x.is_finite()) {
                    return bad(format!("k_x must be positive, got {k_x}"));
                }
            }
        }
        match &self.beta0 {
            Beta0Spec::Explicit { values } => {
                if values.len() != self.p {
                    return Err(Error::ShapeMismatch(format!("beta0 has {} entries, p = {}", values.len(), self.p)));
                }
                let s = values.iter().filter(|v| **v != 0.0).count();
                if s != self.s0 {
                    return bad(format!("beta0 has {s} nonzero entries but s0 = {}", self.s0));
                }
            }
            Beta0Spec::Sparse { magnitude, .. } => match magnitude {
                Magnitude::Fixed { value } if !(*value != 0.0 && value.is_finite()) => {
                    return bad(format!("magnitude must be nonzero and finite, got {value}"))
                }
                Magnitude::LambdaGamma { c } => {
                    if !(*c > 0.0 && c.is_finite()) {
                        return bad(format!("magnitude factor must be positive, got {c}"));
                    }
                    if !matches!(self.lambda, LambdaRule::Fixed { .. } | LambdaRule::SqrtLogPOverN { .. }) {
                        return bad("lambda_gamma magnitudes need a fixed or sqrt_log_p_over_n lambda rule".into());
                    }
                }
                _ => {}
            },
        }
        match self.lambda {
            LambdaRule::Fixed { value } if !(value > 0.0 && value.is_finite()) => bad(format!("lambda must be positive, got {value}")),
            LambdaRule::SqrtLogPOverN { c } if !(c > 0.0 && c.is_finite()) => bad(format!("c must be positive, got {c}")),
            LambdaRule::Theory { multiplier } if !(multiplier > 0.0 && multiplier.is_finite()) => {
                bad(format!("multiplier must be positive, got {multiplier}"))
            }
            LambdaRule::Theory { .. } if family.as_quasi().is_none() && family.robust_view().is_none_or(|r| !r.is_robust()) => {
                bad("the theory lambda rule needs a quasi-likelihood or robust family".into())
            }
            LambdaRule::NoiseEvent { factor, margin } if !(factor >= 0.0 && margin >= 0.0 && factor + margin > 0.0) => {
                bad("noise_event needs factor, margin >= 0 with a positive sum".into())
            }
            _ => Ok(()),
        }
    }
}
