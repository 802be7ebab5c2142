//! Tuning levels, confidence levels, preconditions and oracle bounds.
//!
//! Everything here is closed-form arithmetic on [`TheoryConstants`]. Derived
//! constants are recomputed from the primitives on every call, so a report
//! can always be regenerated from its stored inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{estimate_condition_constants, QuasiFamily};

/// Budget `gamma_X` used for the Gram-distance condition.
pub const GAMMA_X: f64 = 0.25;

/// Relative slack for reporting `lhs <= rhs` when both sides agree up to rounding.
const TIE_SLACK: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub sigma: f64,
    pub kappa: f64,
    pub k_x: f64,
    pub k_0: f64,
    pub c_h: f64,
    pub c_v: f64,
    pub l_h: f64,
    pub l_g: f64,
    #[serde(default)]
    pub c_l: Option<f64>,
}

impl TheoryConstants {
    /// Least squares: `C_h = 1`, `C_V = 2`, `L_h = L_g = 0`.
    pub fn gaussian(sigma: f64, kappa: f64, k_x: f64, k_0: f64) -> Result<Self> {
        TheoryConstants { sigma, kappa, k_x, k_0, c_h: 1.0, c_v: 2.0, l_h: 0.0, l_g: 0.0, c_l: None }.validated()
    }

    /// Family constants estimated on `|z| <= K_X + K_0`.
    pub fn for_family(family: &QuasiFamily, sigma: f64, kappa: f64, k_x: f64, k_0: f64, grid_points: usize) -> Result<Self> {
        let cc = estimate_condition_constants(family, k_x, k_0, grid_points)?;
        TheoryConstants { sigma, kappa, k_x, k_0, c_h: cc.c_h, c_v: cc.c_v, l_h: cc.l_h, l_g: cc.l_g, c_l: cc.c_l }
            .validated()
    }

    pub fn validated(self) -> Result<Self> {
        let positive = [("sigma", self.sigma), ("K_X", self.k_x), ("C_h", self.c_h), ("C_V", self.c_v)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let nonnegative = [("kappa", self.kappa), ("K_0", self.k_0), ("L_h", self.l_h), ("L_g", self.l_g)];
        for (name, v) in nonnegative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative and finite, got {v}")));
            }
        }
        if let Some(c_l) = self.c_l {
            if !(c_l > 0.0 && c_l.is_finite()) {
                return Err(Error::InvalidParameter(format!("C_l must be positive and finite, got {c_l}")));
            }
        }
        Ok(self)
    }

    /// `C_hV = C_V C_h^2`.
    pub fn c_hv(&self) -> f64 {
        self.c_v * self.c_h * self.c_h
    }

    /// `C_hX = 16 C_h K_X`.
    pub fn c_hx(&self) -> f64 {
        16.0 * self.c_h * self.k_x
    }

    /// `L_hV = (L_g + L_h C_V) C_h`.
    pub fn l_hv(&self) -> f64 {
        (self.l_g + self.l_h * self.c_v) * self.c_h
    }

    /// `L_hX = 16 L_h K_X^2`, the analogue of `C_hX`.
    pub fn l_hx(&self) -> f64 {
        16.0 * self.l_h * self.k_x * self.k_x
    }

    fn require_c_l(&self) -> Result<f64> {
        self.c_l
            .ok_or_else(|| Error::InvalidParameter("the robust bounds need the curvature constant C_l".into()))
    }
}

/// `t = log n`, which makes the confidence levels of order `1/n`.
pub fn default_t(n: usize) -> f64 {
    (n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningLevels {
    pub lambda_eps: f64,
    pub lambda_0: f64,
    pub lambda_eps_robust: f64,
    pub alpha_oracle: f64,
    pub alpha_robust: f64,
    pub alpha_select: f64,
}

fn check_sizes(n: usize, p: f64, t: f64) -> Result<()> {
    if n < 1 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if !(p >= 2.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p must be at least 2, got {p}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t must be nonnegative and finite, got {t}")));
    }
    Ok(())
}

/// `16 K_X sqrt(2 (t + log p) / n)`, the noise level for robust losses.
pub fn robust_lambda_eps(k_x: f64, n: usize, p: f64, t: f64) -> Result<f64> {
    check_sizes(n, p, t)?;
    Ok(16.0 * k_x * (2.0 * (t + p.ln()) / n as f64).sqrt())
}

/// `16 C_l Gamma_eff`.
pub fn robust_gamma(c_l: f64, gamma_eff: f64) -> f64 {
    16.0 * c_l * gamma_eff
}

/// Tuning and confidence levels:
///
/// - `lambda_eps = C_hX sigma sqrt(2 (t + log p) / n)`
/// - `lambda_0 = L_hX sigma sqrt(2 (t + 2 log p) / n)`
/// - `lambda_eps_robust = 16 K_X sqrt(2 (t + log p) / n)`
/// - `alpha_oracle = 3 e^-t + 3 kappa^4 / (n sigma^4)`, `alpha_robust = 3 e^-t`,
///   `alpha_select = 9 e^-t + 9 kappa^4 / (n sigma^4)`
///
/// `p` is real so that formal values such as `p = e` are accepted.
pub fn tuning_levels(c: &TheoryConstants, n: usize, p: f64, t: f64) -> Result<TuningLevels> {
    check_sizes(n, p, t)?;
    let nf = n as f64;
    let log_p = p.ln();
    let root = (2.0 * (t + log_p) / nf).sqrt();
    let moment = c.kappa.powi(4) / (nf * c.sigma.powi(4));
    Ok(TuningLevels {
        lambda_eps: c.c_hx() * c.sigma * root,
        lambda_0: c.l_hx() * c.sigma * (2.0 * (t + 2.0 * log_p) / nf).sqrt(),
        lambda_eps_robust: robust_lambda_eps(c.k_x, n, p, t)?,
        alpha_oracle: 3.0 * (-t).exp() + 3.0 * moment,
        alpha_robust: 3.0 * (-t).exp(),
        alpha_select: 9.0 * (-t).exp() + 9.0 * moment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledSparsities {
    /// `16 C_hV Gamma_eff`; also `Gamma_eps` of the selection result.
    pub gamma: f64,
    pub gamma_eps: f64,
    /// `6 L_hV C_hV^2 Gamma_eff`.
    pub gamma_0: f64,
    /// `16 C_l Gamma_eff`, when `C_l` is known.
    pub gamma_robust: Option<f64>,
}

pub fn scaled_sparsities(c: &TheoryConstants, gamma_eff: f64) -> Result<ScaledSparsities> {
    if !(gamma_eff > 0.0 && gamma_eff.is_finite()) {
        return Err(Error::InvalidParameter(format!("effective sparsity must be positive, got {gamma_eff}")));
    }
    let gamma = 16.0 * c.c_hv() * gamma_eff;
    Ok(ScaledSparsities {
        gamma,
        gamma_eps: gamma,
        gamma_0: 6.0 * c.l_hv() * c.c_hv() * c.c_hv() * gamma_eff,
        gamma_robust: c.c_l.map(|c_l| robust_gamma(c_l, gamma_eff)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Precondition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Whether the inequality is `<` rather than `<=`.
    pub strict: bool,
    pub satisfied: bool,
}

impl Precondition {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        let satisfied = lhs <= rhs || lhs <= rhs + TIE_SLACK * rhs.abs();
        Precondition { name: name.into(), lhs, rhs, strict: false, satisfied }
    }

    fn lt(name: &str, lhs: f64, rhs: f64) -> Self {
        Precondition { name: name.into(), lhs, rhs, strict: true, satisfied: lhs < rhs }
    }
}

/// The budgets `gamma_1 = lambda_eps / lambda` and the default equal split
/// `gamma_eps = gamma_0 = (1 - gamma_1) / 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBudget {
    pub gamma_1: f64,
    pub gamma_eps: f64,
    pub gamma_0: f64,
}

impl GammaBudget {
    pub fn from_lambda(lambda_eps: f64, lambda: f64) -> Self {
        let gamma_1 = lambda_eps / lambda;
        let rest = (1.0 - gamma_1) / 3.0;
        GammaBudget { gamma_1, gamma_eps: rest, gamma_0: rest }
    }

    pub fn total(&self) -> f64 {
        self.gamma_1 + self.gamma_eps + self.gamma_0
    }

    /// `(1 - gamma) / (1 + gamma)`.
    pub fn theta_threshold(&self) -> f64 {
        let g = self.total();
        (1.0 - g) / (1.0 + g)
    }
}

/// Inputs of a precondition check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreconditionInputs {
    pub n: usize,
    pub p: f64,
    pub t: f64,
    pub lambda: f64,
    pub gamma_eff: f64,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub lambda_x: Option<f64>,
}

/// Evaluates every named precondition; failures are reported, not thrown.
///
/// - `(s0)`: `lambda_eps Gamma <= 1/4`
/// - `lambda-range-lower` / `lambda-range-upper`: `4 lambda_eps <= lambda <= 1/Gamma`
/// - `(s02)`: `lambda_eps_robust Gamma_robust <= 1/4` (when `C_l` is known)
/// - `gamma1`: `gamma_1 <= 1/4`
/// - `(s03)`: `lambda_eps Gamma_0 <= gamma_1 gamma_eps`
/// - `(s04)`: `lambda_0 Gamma_eps <= gamma_0`
/// - `theta-threshold`: `theta < (1 - gamma) / (1 + gamma)` (when `theta` is given)
/// - `(s05)`: `lambda_X Gamma <= gamma_X` (when `lambda_X` is given)
pub fn check_preconditions(c: &TheoryConstants, inputs: &PreconditionInputs) -> Result<Vec<Precondition>> {
    if !(inputs.lambda > 0.0 && inputs.lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", inputs.lambda)));
    }
    let levels = tuning_levels(c, inputs.n, inputs.p, inputs.t)?;
    let gammas = scaled_sparsities(c, inputs.gamma_eff)?;
    let budget = GammaBudget::from_lambda(levels.lambda_eps, inputs.lambda);
    let mut out = vec![
        Precondition::le("(s0)", levels.lambda_eps * gammas.gamma, 0.25),
        Precondition::le("lambda-range-lower", 4.0 * levels.lambda_eps, inputs.lambda),
        Precondition::le("lambda-range-upper", inputs.lambda, 1.0 / gammas.gamma),
    ];
    if let Some(gamma_robust) = gammas.gamma_robust {
        out.push(Precondition::le("(s02)", levels.lambda_eps_robust * gamma_robust, 0.25));
    }
    out.push(Precondition::le("gamma1", budget.gamma_1, 0.25));
    out.push(Precondition::le("(s03)", levels.lambda_eps * gammas.gamma_0, budget.gamma_1 * budget.gamma_eps));
    out.push(Precondition::le("(s04)", levels.lambda_0 * gammas.gamma_eps, budget.gamma_0));
    if let Some(theta) = inputs.theta {
        out.push(Precondition::lt("theta-threshold", theta, budget.theta_threshold()));
    }
    if let Some(lambda_x) = inputs.lambda_x {
        out.push(Precondition::le("(s05)", lambda_x * gammas.gamma, GAMMA_X));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Least squares with `lambda >= 4 max_j |eps^T X_j| / n`, in the
    /// normalization `||Y - X beta||_n^2 + lambda ||beta||_1`.
    Thm1,
    /// Quasi-likelihood oracle inequality.
    Thm2,
    /// Robust-loss oracle inequality.
    Thm4,
    /// Weighted-Gram prediction bound used for random designs.
    RandomDesign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBound {
    pub ell1_bound: f64,
    pub prediction_bound: f64,
    /// Bound on `prediction + lambda * ell1` (least squares only).
    pub combined_bound: Option<f64>,
}

/// Right-hand sides of the oracle inequalities:
///
/// - `Thm1`: `pred + lambda ell1 <= 4 lambda^2 Gamma_eff`
/// - `Thm2`: `ell1 <= (lambda/2) Gamma`, `pred <= (3/4) C_hV lambda^2 Gamma`
/// - `Thm4`: `ell1 <= (lambda/2) Gamma_robust`, `pred <= (3/4) C_l lambda^2 Gamma_robust`
/// - `RandomDesign`: `ell1 <= (lambda/2) Gamma`, weighted `pred <= 6 C_hV^3 lambda^2 Gamma_eff`
pub fn oracle_bounds(kind: BoundKind, c: &TheoryConstants, lambda: f64, gamma_eff: f64) -> Result<OracleBound> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let gammas = scaled_sparsities(c, gamma_eff)?;
    let l2 = lambda * lambda;
    Ok(match kind {
        BoundKind::Thm1 => {
            let combined = 4.0 * l2 * gamma_eff;
            OracleBound { ell1_bound: 4.0 * lambda * gamma_eff, prediction_bound: combined, combined_bound: Some(combined) }
        }
        BoundKind::Thm2 => OracleBound {
            ell1_bound: 0.5 * lambda * gammas.gamma,
            prediction_bound: 0.75 * c.c_hv() * l2 * gammas.gamma,
            combined_bound: None,
        },
        BoundKind::Thm4 => {
            let c_l = c.require_c_l()?;
            let gamma = robust_gamma(c_l, gamma_eff);
            OracleBound { ell1_bound: 0.5 * lambda * gamma, prediction_bound: 0.75 * c_l * l2 * gamma, combined_bound: None }
        }
        BoundKind::RandomDesign => OracleBound {
            ell1_bound: 0.5 * lambda * gammas.gamma,
            prediction_bound: 6.0 * c.c_hv().powi(3) * l2 * gamma_eff,
            combined_bound: None,
        },
    })
}

/// Every constant, level, precondition and bound for one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub constants: TheoryConstants,
    pub inputs: PreconditionInputs,
    pub c_hv: f64,
    pub c_hx: f64,
    pub l_hv: f64,
    pub l_hx: f64,
    pub lambda_eps: f64,
    pub lambda_0: f64,
    pub lambda_eps_robust: f64,
    pub alpha_oracle: f64,
    pub alpha_robust: f64,
    pub alpha_select: f64,
    pub gamma: f64,
    pub gamma_eps: f64,
    pub gamma_0: f64,
    pub gamma_robust: Option<f64>,
    pub budget: GammaBudget,
    pub ell1_bound: f64,
    pub prediction_bound: f64,
    pub combined_bound: Option<f64>,
    pub preconditions: Vec<Precondition>,
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn all_satisfied(&self) -> bool {
        self.preconditions.iter().all(|p| p.satisfied)
    }

    pub fn precondition(&self, name: &str) -> Option<&Precondition> {
        self.preconditions.iter().find(|p| p.name == name)
    }

    /// Plain-text PASS/FAIL table of the preconditions.
    pub fn table(&self) -> String {
        let mut out = format!("{:<20} {:>24} {:>3} {:>24}  {}\n", "condition", "lhs", "", "rhs", "status");
        for p in &self.preconditions {
            let op = if p.strict { "<" } else { "<=" };
            let status = if p.satisfied { "PASS" } else { "FAIL" };
            out.push_str(&format!("{:<20} {:>24.16e} {:>3} {:>24.16e}  {}\n", p.name, p.lhs, op, p.rhs, status));
        }
        out
    }
}

pub fn bound_report(kind: BoundKind, c: &TheoryConstants, inputs: &PreconditionInputs) -> Result<BoundReport> {
    let c = c.validated()?;
    let levels = tuning_levels(&c, inputs.n, inputs.p, inputs.t)?;
    let gammas = scaled_sparsities(&c, inputs.gamma_eff)?;
    let bound = oracle_bounds(kind, &c, inputs.lambda, inputs.gamma_eff)?;
    let preconditions = check_preconditions(&c, inputs)?;
    let mut notes = vec![
        "L_hX is taken as 16 L_h K_X^2, parallel to C_hX = 16 C_h K_X".to_string(),
        "gamma_eps = gamma_0 = (1 - gamma_1)/3 with gamma_1 = lambda_eps/lambda".to_string(),
    ];
    if c.c_l.is_some() {
        notes.push("(s02) uses the robust Gamma = 16 C_l Gamma_eff and the robust lambda_eps".to_string());
    }
    if kind == BoundKind::Thm1 {
        notes.push("Thm1 lambda is in the ||Y - X beta||_n^2 + lambda ||beta||_1 normalization".to_string());
    }
    Ok(BoundReport {
        kind,
        constants: c,
        inputs: *inputs,
        c_hv: c.c_hv(),
        c_hx: c.c_hx(),
        l_hv: c.l_hv(),
        l_hx: c.l_hx(),
        lambda_eps: levels.lambda_eps,
        lambda_0: levels.lambda_0,
        lambda_eps_robust: levels.lambda_eps_robust,
        alpha_oracle: levels.alpha_oracle,
        alpha_robust: levels.alpha_robust,
        alpha_select: levels.alpha_select,
        gamma: gammas.gamma,
        gamma_eps: gammas.gamma_eps,
        gamma_0: gammas.gamma_0,
        gamma_robust: gammas.gamma_robust,
        budget: GammaBudget::from_lambda(levels.lambda_eps, inputs.lambda),
        ell1_bound: bound.ell1_bound,
        prediction_bound: bound.prediction_bound,
        combined_bound: bound.combined_bound,
        preconditions,
        notes,
    })
}

/// Empirical surrogates for the error-moment constants `sigma` and `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMoments {
    pub sigma_hat: f64,
    pub kappa_hat: f64,
}

/// `sigma_hat^2` is the largest per-group mean square (one pooled group by
/// default) and `kappa_hat^4 = mean (eps_i^2 - mean eps^2)^2`.
pub fn estimate_error_moments(residuals: &[f64], groups: Option<&[usize]>) -> Result<ErrorMoments> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 residuals, got {n}")));
    }
    let squares: Vec<f64> = residuals.iter().map(|e| e * e).collect();
    let mean_sq = squares.iter().sum::<f64>() / n as f64;
    let sigma_sq = match groups {
        None => mean_sq,
        Some(g) => {
            if g.len() != n {
                return Err(Error::ShapeMismatch(format!("{} group labels for {n} residuals", g.len())));
            }
            let k = g.iter().max().map_or(0, |m| m + 1);
            let mut sums = vec![0.0; k];
            let mut counts = vec![0usize; k];
            for (&label, &sq) in g.iter().zip(&squares) {
                sums[label] += sq;
                counts[label] += 1;
            }
            sums.iter()
                .zip(&counts)
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| s / c as f64)
                .fold(0.0, f64::max)
        }
    };
    let kappa4 = squares.iter().map(|s| (s - mean_sq).powi(2)).sum::<f64>() / n as f64;
    Ok(ErrorMoments { sigma_hat: sigma_sq.sqrt(), kappa_hat: kappa4.powf(0.25) })
}
