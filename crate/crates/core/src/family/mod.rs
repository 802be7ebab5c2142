//! Loss families: quasi-likelihood models, robust losses, and the
//! regularity constants they induce on a bounded predictor interval.

pub mod constants;
pub mod quasi;
pub mod robust;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use constants::{
    estimate_condition_b, estimate_condition_constants, ConditionConstants, ConditionalLaw,
};
pub use quasi::{BernoulliModel, BinaryLink, GaussianModel, QuasiFamily, QuasiModel};
pub use robust::{RobustKind, RobustLoss, SmoothedLoss, Subgradient};

/// Serializable description of a built-in family: a kind plus its numeric parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilySpec {
    Gaussian,
    Logistic,
    BinaryLink { link: BinaryLink },
    Quantile { alpha: f64 },
    Lad,
    Huber { k: f64 },
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilySpec::Gaussian => write!(f, "gaussian"),
            FamilySpec::Logistic => write!(f, "logistic"),
            FamilySpec::BinaryLink { link } => {
                let name = match link {
                    BinaryLink::Logit => "logit",
                    BinaryLink::Probit => "probit",
                    BinaryLink::Cloglog => "cloglog",
                };
                write!(f, "binary_link:{name}")
            }
            FamilySpec::Quantile { alpha } => write!(f, "quantile:{alpha}"),
            FamilySpec::Lad => write!(f, "lad"),
            FamilySpec::Huber { k } => write!(f, "huber:{k}"),
        }
    }
}

impl FromStr for FamilySpec {
    type Err = Error;

    /// Accepts `kind[:param]` shorthand (`quantile:0.25`, `huber:1.345`,
    /// `binary_link:probit`, `probit`) or a JSON object such as
    /// `{"kind":"quantile","alpha":0.25}`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()));
        }
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k.trim(), Some(p.trim())),
            None => (s, None),
        };
        let number = |name: &str| -> Result<f64> {
            let p = param.ok_or_else(|| {
                Error::InvalidParameter(format!("family `{kind}` needs a parameter `{name}`"))
            })?;
            p.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("`{p}` is not a number for `{name}`")))
        };
        let link = |name: &str| -> Result<BinaryLink> {
            match name {
                "logit" => Ok(BinaryLink::Logit),
                "probit" => Ok(BinaryLink::Probit),
                "cloglog" => Ok(BinaryLink::Cloglog),
                other => Err(Error::InvalidParameter(format!("unknown binary link `{other}`"))),
            }
        };
        let spec = match kind.to_ascii_lowercase().as_str() {
            "gaussian" | "least_squares" => FamilySpec::Gaussian,
            "logistic" => FamilySpec::Logistic,
            "probit" => FamilySpec::BinaryLink { link: BinaryLink::Probit },
            "cloglog" => FamilySpec::BinaryLink { link: BinaryLink::Cloglog },
            "binary_link" => FamilySpec::BinaryLink {
                link: link(param.ok_or_else(|| {
                    Error::InvalidParameter("binary_link needs a link name".into())
                })?)?,
            },
            "quantile" => FamilySpec::Quantile { alpha: number("alpha")? },
            "lad" => FamilySpec::Lad,
            "huber" => FamilySpec::Huber { k: number("k")? },
            other => return Err(Error::UnknownFamily(other.to_string())),
        };
        Ok(spec)
    }
}

/// A loss family usable by the solver.
#[derive(Debug, Clone)]
pub enum Family {
    Quasi(QuasiFamily),
    Robust(RobustLoss),
}

/// Builds the family described by `spec`, validating its parameters.
pub fn make_family(spec: &FamilySpec) -> Result<Family> {
    Ok(match *spec {
        FamilySpec::Gaussian => Family::Quasi(QuasiFamily::gaussian()),
        FamilySpec::Logistic => Family::Quasi(QuasiFamily::logistic()),
        FamilySpec::BinaryLink { link } => Family::Quasi(QuasiFamily::binary(link)),
        FamilySpec::Quantile { alpha } => Family::Robust(RobustLoss::quantile(alpha)?),
        FamilySpec::Lad => Family::Robust(RobustLoss::lad()),
        FamilySpec::Huber { k } => Family::Robust(RobustLoss::huber(k)?),
    })
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Quasi(q) => q.name(),
            Family::Robust(r) => r.name(),
        }
    }

    pub fn as_quasi(&self) -> Option<&QuasiFamily> {
        match self {
            Family::Quasi(q) => Some(q),
            Family::Robust(_) => None,
        }
    }

    /// The robust-loss view: the robust loss itself, or the logistic loss
    /// when the quasi family is logistic.
    pub fn robust_view(&self) -> Option<RobustLoss> {
        match self {
            Family::Robust(r) => Some(*r),
            Family::Quasi(q) if q.name() == "logistic" => Some(RobustLoss::logistic()),
            Family::Quasi(_) => None,
        }
    }

    pub fn is_smooth(&self) -> bool {
        match self {
            Family::Quasi(_) => true,
            Family::Robust(r) => r.is_smooth(),
        }
    }

    pub fn check_response(&self, y: f64) -> Result<()> {
        match self {
            Family::Quasi(q) => q.check_response(y),
            Family::Robust(r) => r.check_response(y),
        }
    }

    pub fn loss(&self, y: f64, z: f64) -> Result<f64> {
        match self {
            Family::Quasi(q) => q.loss(y, z),
            Family::Robust(r) => {
                r.check_response(y)?;
                Ok(r.loss(y, z))
            }
        }
    }

    /// Derivative in `z`, with the kink flag and subdifferential interval for robust losses.
    pub fn subgradient(&self, y: f64, z: f64) -> Result<Subgradient> {
        match self {
            Family::Quasi(q) => {
                let d = q.loss_derivative(y, z)?;
                Ok(Subgradient { selection: d, lower: d, upper: d, at_kink: false })
            }
            Family::Robust(r) => {
                r.check_response(y)?;
                Ok(r.subgradient(y, z))
            }
        }
    }

    pub fn loss_derivative(&self, y: f64, z: f64) -> Result<f64> {
        self.subgradient(y, z).map(|s| s.selection)
    }

    /// The built-in spec this family was made from, when there is one.
    pub fn spec(&self) -> Option<FamilySpec> {
        match self {
            Family::Quasi(q) => match q.name() {
                "gaussian" => Some(FamilySpec::Gaussian),
                "logistic" => Some(FamilySpec::Logistic),
                "probit" => Some(FamilySpec::BinaryLink { link: BinaryLink::Probit }),
                "cloglog" => Some(FamilySpec::BinaryLink { link: BinaryLink::Cloglog }),
                _ => None,
            },
            Family::Robust(r) if r.scale() == 1.0 => match r.kind() {
                RobustKind::Quantile { alpha } => Some(FamilySpec::Quantile { alpha }),
                RobustKind::Lad => Some(FamilySpec::Lad),
                RobustKind::Huber { k } => Some(FamilySpec::Huber { k }),
                RobustKind::Logistic => Some(FamilySpec::Logistic),
            },
            Family::Robust(_) => None,
        }
    }
}
