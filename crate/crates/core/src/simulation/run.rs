use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

use super::config::{ErrorLaw, LambdaRule, ScenarioConfig, TheoremKind};
use super::instance::{error_shift, gamma_eff, generate_instance, plain_lambda, shared_design, student_scale, GammaEff, Instance};
use crate::calibration::{
    check_preconditions, oracle_bounds, robust_gamma, robust_lambda_eps, tuning_levels, BoundKind, Precondition,
    PreconditionInputs, TheoryConstants,
};
use crate::design::{irrepresentable_theta, weighted_gram, DesignMatrix, IndexSet, WeightedGram};
use crate::error::{Error, Result};
use crate::family::{estimate_condition_b, ConditionalLaw, Family, QuasiFamily, RobustLoss};
use crate::solver::{fit, restricted_fit, PenalizedProblem, SolverConfig};

/// Relative slack when comparing a realized quantity with a theorem bound.
pub const BOUND_SLACK: f64 = 1e-9;

fn at_most(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + BOUND_SLACK * rhs.abs().max(1e-3)
}

/// One side-by-side comparison inside a theorem check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Comparison {
    fn new(name: &str, lhs: f64, rhs: f64, holds: bool) -> Self {
        Comparison { name: name.into(), lhs, rhs, holds }
    }

    fn from_precondition(p: &Precondition) -> Self {
        Comparison::new(&p.name, p.lhs, p.rhs, p.satisfied)
    }
}

/// Hypotheses, event and conclusion of one theorem in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub theorem: TheoremKind,
    /// Everything the theorem assumes. For the deterministic theorems this
    /// includes their noise event.
    pub hypotheses: bool,
    /// The noise event: `4 max_j |eps^T X_j|/n <= lambda` (least squares,
    /// squared-norm normalization) or, for the probabilistic theorems, the score
    /// bound `max_j |sum_i s_i x_ij| / n <= lambda_eps(t) / 16`.
    pub event: bool,
    pub conclusion: bool,
    /// Confidence complement of the probabilistic theorems.
    pub alpha: Option<f64>,
    pub comparisons: Vec<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TheoremCheck {
    fn skipped(theorem: TheoremKind, note: String) -> Self {
        TheoremCheck { theorem, hypotheses: false, event: false, conclusion: false, alpha: None, comparisons: Vec::new(), note: Some(note) }
    }

    pub fn comparison(&self, name: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.name == name)
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replication: usize,
    pub master_seed: u64,
    pub lambda: f64,
    pub k_x: f64,
    pub k_0: f64,
    pub sigma: f64,
    pub kappa: f64,
    /// `max_j |eps^T X_j| / n`.
    pub noise_correlation: f64,
    pub support: IndexSet,
    /// `||X (beta_hat - beta0)||_n^2`; absent when the fit failed.
    pub prediction_error: Option<f64>,
    pub ell1_error: Option<f64>,
    pub selected: Option<IndexSet>,
    pub true_positives: Option<usize>,
    pub false_positives: Option<usize>,
    pub kkt_certified: Option<bool>,
    pub gamma_eff: Option<GammaEff>,
    pub oracle_prediction_error: Option<f64>,
    pub oracle_ell1_error: Option<f64>,
    /// `#{beta_hat_j != 0, |beta0_j| >= lambda/eta} >= #{|beta0_j| >= lambda/eta} - eta ||beta_hat - beta0||_1 / lambda`
    /// for every configured `eta`.
    pub true_positive_bound: Option<bool>,
    pub checks: Vec<TheoremCheck>,
    /// Solver failure; such runs are excluded from pass rates.
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn check(&self, theorem: TheoremKind) -> Option<&TheoremCheck> {
        self.checks.iter().find(|c| c.theorem == theorem)
    }

    pub fn excluded(&self) -> bool {
        self.failure.is_some()
    }
}

/// A scenario with its shared pieces resolved once.
pub struct Scenario {
    config: ScenarioConfig,
    family: Family,
    checks: Vec<TheoremKind>,
    shared: Option<DesignMatrix>,
    gamma_cache: Mutex<HashMap<Vec<usize>, std::result::Result<GammaEff, Error>>>,
    solver: SolverConfig,
}

impl Scenario {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        Ok(Scenario {
            config: config.clone(),
            family: config.family()?,
            checks: config.active_checks()?,
            shared: shared_design(config)?,
            gamma_cache: Mutex::new(HashMap::new()),
            solver: SolverConfig::default(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn instance(&self, index: usize) -> Result<Instance> {
        generate_instance(&self.config, index, self.shared.as_ref())
    }

    fn gamma_eff(&self, design: &DesignMatrix, support: &IndexSet) -> std::result::Result<GammaEff, Error> {
        if self.shared.is_none() {
            return gamma_eff(design, support, self.config.s_max);
        }
        let key = support.indices().to_vec();
        if let Some(hit) = self.gamma_cache.lock().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let value = gamma_eff(design, support, self.config.s_max);
        self.gamma_cache.lock().expect("cache lock").insert(key, value.clone());
        value
    }

    /// Runs replication `index`. Invalid configurations are errors; solver
    /// failures are recorded in the returned record.
    pub fn run(&self, index: usize) -> Result<RunRecord> {
        let cfg = &self.config;
        let inst = self.instance(index)?;
        let design = &inst.design;
        let n = cfg.n as f64;
        let t = cfg.t();
        let support = IndexSet::support(&inst.beta0);
        let noise_correlation = max_correlation(design, &inst.noise);
        let lambda = self.lambda(&inst, noise_correlation)?;
        let mut record = RunRecord {
            replication: index,
            master_seed: cfg.master_seed,
            lambda,
            k_x: design.k_x(),
            k_0: inst.k_0,
            sigma: inst.sigma,
            kappa: inst.kappa,
            noise_correlation,
            support: support.clone(),
            prediction_error: None,
            ell1_error: None,
            selected: None,
            true_positives: None,
            false_positives: None,
            kkt_certified: None,
            gamma_eff: inst.gamma_eff,
            oracle_prediction_error: None,
            oracle_ell1_error: None,
            true_positive_bound: None,
            checks: Vec::new(),
            failure: None,
        };
        let problem = PenalizedProblem::new(design, &inst.response, &self.family, lambda)?;
        let fitted = match fit(&problem, &self.solver) {
            Ok(f) => f,
            Err(e) => {
                record.failure = Some(e.to_string());
                return Ok(record);
            }
        };
        let beta_hat = fitted.beta;
        let diff: Vec<f64> = beta_hat.iter().zip(&inst.beta0).map(|(a, b)| a - b).collect();
        let pred = design.predict(&diff)?.norm_squared() / n;
        let ell1: f64 = diff.iter().map(|d| d.abs()).sum();
        let selected = IndexSet::support(&beta_hat);
        let tp = selected.iter().filter(|&j| support.contains(j)).count();
        record.prediction_error = Some(pred);
        record.ell1_error = Some(ell1);
        record.true_positives = Some(tp);
        record.selected = Some(selected.clone());
        record.false_positives = Some(selected.len() - tp);
        record.kkt_certified = Some(fitted.converged && fitted.sign_consistency_ok);
        record.true_positive_bound = Some(cfg.etas.iter().all(|&eta| {
            let cut = lambda / eta;
            let strong = inst.beta0.iter().filter(|b| b.abs() >= cut).count() as f64;
            let found = (0..cfg.p).filter(|&j| beta_hat[j] != 0.0 && inst.beta0[j].abs() >= cut).count() as f64;
            found >= strong - eta * ell1 / lambda
        }));
        if let Ok(oracle) = restricted_fit(&problem, &support) {
            let d: Vec<f64> = oracle.beta.iter().zip(&inst.beta0).map(|(a, b)| a - b).collect();
            record.oracle_prediction_error = Some(design.predict(&d)?.norm_squared() / n);
            record.oracle_ell1_error = Some(d.iter().map(|v| v.abs()).sum());
        }

        let needs_gamma = self.checks.iter().any(|k| !matches!(k, TheoremKind::Thm5));
        let gamma = match (inst.gamma_eff, needs_gamma && !support.is_empty()) {
            (Some(g), _) => Some(Ok(g)),
            (None, true) => Some(self.gamma_eff(design, &support)),
            (None, false) => None,
        };
        if let Some(Ok(g)) = gamma {
            record.gamma_eff = Some(g);
        }
        let ctx = Context { inst: &inst, support: &support, selected: &selected, lambda, t, pred, ell1, gamma: gamma.as_ref(), noise_correlation };
        for &kind in &self.checks {
            let check = match kind {
                TheoremKind::Thm1 => self.thm1(&ctx),
                TheoremKind::Thm5 => self.thm5(&ctx),
                TheoremKind::Thm2 => self.thm2(&ctx),
                TheoremKind::Thm4 => self.thm4(&ctx),
                TheoremKind::Thm7 => self.thm7(&ctx),
            };
            record.checks.push(check.unwrap_or_else(|e| TheoremCheck::skipped(kind, e.to_string())));
        }
        Ok(record)
    }

    fn lambda(&self, inst: &Instance, noise_correlation: f64) -> Result<f64> {
        let cfg = &self.config;
        if let Some(l) = plain_lambda(&cfg.lambda, cfg.n, cfg.p) {
            return Ok(l);
        }
        match cfg.lambda {
            LambdaRule::NoiseEvent { factor, margin } => Ok(factor * noise_correlation + margin),
            LambdaRule::Theory { multiplier } => {
                let level = match self.family.as_quasi() {
                    Some(q) => {
                        let c = self.constants(q, inst)?;
                        tuning_levels(&c, cfg.n, cfg.p as f64, cfg.t())?.lambda_eps
                    }
                    None => robust_lambda_eps(inst.design.k_x(), cfg.n, cfg.p as f64, cfg.t())?,
                };
                let lambda = multiplier * level;
                if lambda > 0.0 {
                    Ok(lambda)
                } else {
                    Err(Error::InvalidParameter("theory lambda is zero (noiseless errors?)".into()))
                }
            }
            _ => unreachable!("plain rules handled above"),
        }
    }

    fn constants(&self, q: &QuasiFamily, inst: &Instance) -> Result<TheoryConstants> {
        TheoryConstants::for_family(q, inst.sigma, inst.kappa, inst.design.k_x(), inst.k_0, self.config.grid_points)
    }

    fn inputs(&self, ctx: &Context, gamma_eff: f64, theta: Option<f64>) -> PreconditionInputs {
        PreconditionInputs { n: self.config.n, p: self.config.p as f64, t: ctx.t, lambda: ctx.lambda, gamma_eff, theta, lambda_x: None }
    }

    /// Least squares in the normalization `||Y - X beta||_n^2 + lambda_ls ||beta||_1`,
    /// so `lambda_ls = 2 lambda`.
    fn thm1(&self, ctx: &Context) -> Result<TheoremCheck> {
        let lambda_ls = 2.0 * ctx.lambda;
        let bound_level = 4.0 * ctx.noise_correlation;
        let event = bound_level <= lambda_ls;
        let gamma_eff = ctx.gamma_eff()?;
        let lhs = ctx.pred + lambda_ls * ctx.ell1;
        let c = TheoryConstants::gaussian(1.0, 0.0, 1.0, 0.0)?;
        let rhs = if gamma_eff == 0.0 { 0.0 } else { oracle_bounds(BoundKind::Thm1, &c, lambda_ls, gamma_eff)?.combined_bound.unwrap_or(0.0) };
        let conclusion = at_most(lhs, rhs);
        Ok(TheoremCheck {
            theorem: TheoremKind::Thm1,
            hypotheses: event,
            event,
            conclusion,
            alpha: None,
            comparisons: vec![
                Comparison::new("event", bound_level, lambda_ls, event),
                Comparison::new("prediction+l1", lhs, rhs, conclusion),
            ],
            note: None,
        })
    }

    /// Least-squares selection with `lambda_ls = 2 lambda` and
    /// `lambda_0 = 2 max_j |eps^T X_j| / n`.
    fn thm5(&self, ctx: &Context) -> Result<TheoremCheck> {
        let design = &ctx.inst.design;
        let lambda_ls = 2.0 * ctx.lambda;
        let lambda_0 = 2.0 * ctx.noise_correlation;
        let theta = irrepresentable_theta(&WeightedGram::from_matrix(design.gram())?, ctx.support)?.theta;
        let threshold = (lambda_ls - lambda_0) / (lambda_ls + lambda_0);
        let event = lambda_ls > lambda_0 && theta < threshold;
        let conclusion = ctx.selected.is_subset_of(ctx.support);
        Ok(TheoremCheck {
            theorem: TheoremKind::Thm5,
            hypotheses: event,
            event,
            conclusion,
            alpha: None,
            comparisons: vec![
                Comparison::new("lambda>lambda0", lambda_0, lambda_ls, lambda_ls > lambda_0),
                Comparison::new("theta-threshold", theta, threshold, theta < threshold),
            ],
            note: None,
        })
    }

    /// `max_j |sum_i eps_i h(f0_i) x_ij| / n`.
    fn quasi_score(&self, q: &QuasiFamily, inst: &Instance) -> Result<f64> {
        let f0 = inst.design.predict(&inst.beta0)?;
        let weighted: Vec<f64> = f0.iter().zip(&inst.noise).map(|(&f, e)| q.h(f).map(|h| h * e)).collect::<Result<_>>()?;
        Ok(max_correlation(&inst.design, &weighted))
    }

    fn thm2(&self, ctx: &Context) -> Result<TheoremCheck> {
        let q = self.family.as_quasi().expect("quasi family");
        let gamma_eff = ctx.gamma_eff_positive()?;
        let c = self.constants(q, ctx.inst)?;
        let inputs = self.inputs(ctx, gamma_eff, None);
        let pre = check_preconditions(&c, &inputs)?;
        let pick = |name: &str| pre.iter().find(|p| p.name == name).expect("precondition present");
        let mut comparisons: Vec<Comparison> =
            ["(s0)", "lambda-range-lower", "lambda-range-upper"].iter().map(|n| Comparison::from_precondition(pick(n))).collect();
        let hypotheses = comparisons.iter().all(|c| c.holds);
        let levels = tuning_levels(&c, self.config.n, self.config.p as f64, ctx.t)?;
        let score = self.quasi_score(q, ctx.inst)?;
        let event = score <= levels.lambda_eps / 16.0;
        comparisons.push(Comparison::new("score-event", score, levels.lambda_eps / 16.0, event));
        let bound = oracle_bounds(BoundKind::Thm2, &c, ctx.lambda, gamma_eff)?;
        let l1_ok = at_most(ctx.ell1, bound.ell1_bound);
        let pred_ok = at_most(ctx.pred, bound.prediction_bound);
        comparisons.push(Comparison::new("l1", ctx.ell1, bound.ell1_bound, l1_ok));
        comparisons.push(Comparison::new("prediction", ctx.pred, bound.prediction_bound, pred_ok));
        Ok(TheoremCheck {
            theorem: TheoremKind::Thm2,
            hypotheses,
            event,
            conclusion: l1_ok && pred_ok,
            alpha: Some(levels.alpha_oracle),
            comparisons,
            note: None,
        })
    }

    fn thm4(&self, ctx: &Context) -> Result<TheoremCheck> {
        let cfg = &self.config;
        let inst = ctx.inst;
        let loss = self.family.robust_view().expect("robust view");
        let gamma_eff = ctx.gamma_eff_positive()?;
        let c_l = self.condition_b(&loss, inst)?;
        let k_x = inst.design.k_x();
        let lambda_eps = robust_lambda_eps(k_x, cfg.n, cfg.p as f64, ctx.t)?;
        let gamma = robust_gamma(c_l, gamma_eff);
        let s02 = lambda_eps * gamma;
        let mut comparisons = vec![
            Comparison::new("(s02)", s02, 0.25, s02 <= 0.25),
            Comparison::new("lambda-range-lower", 4.0 * lambda_eps, ctx.lambda, 4.0 * lambda_eps <= ctx.lambda),
            Comparison::new("lambda-range-upper", ctx.lambda, 1.0 / gamma, ctx.lambda <= 1.0 / gamma),
        ];
        let hypotheses = comparisons.iter().all(|c| c.holds);
        let f0 = inst.design.predict(&inst.beta0)?;
        let scores: Vec<f64> =
            inst.response.iter().zip(f0.iter()).map(|(&y, &f)| self.family.loss_derivative(y, f)).collect::<Result<_>>()?;
        let score = max_correlation(&inst.design, &scores);
        let event = score <= lambda_eps / 16.0;
        comparisons.push(Comparison::new("score-event", score, lambda_eps / 16.0, event));
        let constants = TheoryConstants { c_l: Some(c_l), ..TheoryConstants::gaussian(1.0, 0.0, k_x, inst.k_0)? };
        let bound = oracle_bounds(BoundKind::Thm4, &constants, ctx.lambda, gamma_eff)?;
        let l1_ok = at_most(ctx.ell1, bound.ell1_bound);
        let pred_ok = at_most(ctx.pred, bound.prediction_bound);
        comparisons.push(Comparison::new("l1", ctx.ell1, bound.ell1_bound, l1_ok));
        comparisons.push(Comparison::new("prediction", ctx.pred, bound.prediction_bound, pred_ok));
        Ok(TheoremCheck {
            theorem: TheoremKind::Thm4,
            hypotheses,
            event,
            conclusion: l1_ok && pred_ok,
            alpha: Some(3.0 * (-ctx.t).exp()),
            comparisons,
            note: None,
        })
    }

    /// `C_l` for the generating law. For additive errors `l_i''` depends on
    /// `z - f0_i` only, so the curvature is scanned over `|u| <= K_X + 2 K_0`.
    fn condition_b(&self, loss: &RobustLoss, inst: &Instance) -> Result<f64> {
        let k_x = inst.design.k_x();
        let grid = self.config.grid_points.max(64);
        match self.config.error {
            ErrorLaw::Model => {
                let f0 = inst.design.predict(&inst.beta0)?;
                estimate_condition_b(loss, &ConditionalLaw::BernoulliLogistic, f0.as_slice(), k_x, inst.k_0, grid)
            }
            law => {
                let shift = error_shift(&self.config)?;
                let (pdf, half_width): (Box<dyn Fn(f64) -> f64 + Sync>, f64) = match law {
                    ErrorLaw::Gaussian { sigma } => {
                        let d = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                        (Box::new(move |e| d.pdf(e)), 12.0 * sigma)
                    }
                    ErrorLaw::StudentT { df, sigma } => {
                        let d = StudentsT::new(0.0, student_scale(df, sigma), df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                        let w = d.inverse_cdf(1.0 - 1e-12);
                        (Box::new(move |e| d.pdf(e)), w)
                    }
                    ErrorLaw::Model => unreachable!(),
                };
                let density = move |e: f64| pdf(e + shift);
                let law = ConditionalLaw::Additive { density: &density, lower: -half_width - shift, upper: half_width - shift };
                estimate_condition_b(loss, &law, &[0.0], k_x + inst.k_0, inst.k_0, grid)
            }
        }
    }

    fn thm7(&self, ctx: &Context) -> Result<TheoremCheck> {
        let q = self.family.as_quasi().expect("quasi family");
        let inst = ctx.inst;
        let gamma_eff = ctx.gamma_eff_positive()?;
        let c = self.constants(q, inst)?;
        let gram = weighted_gram(&inst.design, &inst.beta0, q)?;
        let theta = irrepresentable_theta(&gram, ctx.support)?.theta;
        let inputs = self.inputs(ctx, gamma_eff, Some(theta));
        let pre = check_preconditions(&c, &inputs)?;
        let names = ["lambda-range-upper", "gamma1", "(s03)", "(s04)", "theta-threshold"];
        let mut comparisons: Vec<Comparison> =
            pre.iter().filter(|p| names.contains(&p.name.as_str())).map(Comparison::from_precondition).collect();
        let hypotheses = comparisons.iter().all(|c| c.holds);
        let levels = tuning_levels(&c, self.config.n, self.config.p as f64, ctx.t)?;
        let score = self.quasi_score(q, inst)?;
        let event = score <= levels.lambda_eps / 16.0;
        comparisons.push(Comparison::new("score-event", score, levels.lambda_eps / 16.0, event));
        let conclusion = ctx.selected.is_subset_of(ctx.support);
        Ok(TheoremCheck {
            theorem: TheoremKind::Thm7,
            hypotheses,
            event,
            conclusion,
            alpha: Some(levels.alpha_select),
            comparisons,
            note: None,
        })
    }
}

struct Context<'a> {
    inst: &'a Instance,
    support: &'a IndexSet,
    selected: &'a IndexSet,
    lambda: f64,
    t: f64,
    pred: f64,
    ell1: f64,
    gamma: Option<&'a std::result::Result<GammaEff, Error>>,
    noise_correlation: f64,
}

impl Context<'_> {
    /// `Gamma_eff(S0)`, zero for an empty support.
    fn gamma_eff(&self) -> Result<f64> {
        match self.gamma {
            None => Ok(0.0),
            Some(Ok(g)) => Ok(g.value),
            Some(Err(e)) => Err(e.clone()),
        }
    }

    fn gamma_eff_positive(&self) -> Result<f64> {
        if self.support.is_empty() {
            return Err(Error::InvalidParameter("empty support: the compatibility constant is undefined".into()));
        }
        self.gamma_eff()
    }
}

/// `max_j |v^T X_j| / n`.
pub fn max_correlation(design: &DesignMatrix, v: &[f64]) -> f64 {
    let x = design.matrix();
    let n = design.n() as f64;
    (0..design.p())
        .map(|j| x.column(j).iter().zip(v).map(|(a, b)| a * b).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

/// Runs replication `index` of `config` on its own.
pub fn run_replication(config: &ScenarioConfig, index: usize) -> Result<RunRecord> {
    Scenario::new(config)?.run(index)
}

/// Runs every replication, in parallel when `threads` allows it. Records come
/// back ordered by replication and do not depend on the thread count.
pub fn run_scenario(config: &ScenarioConfig, threads: Option<usize>) -> Result<Vec<RunRecord>> {
    let scenario = Scenario::new(config)?;
    let work = || (0..config.replications).into_par_iter().map(|i| scenario.run(i)).collect::<Result<Vec<_>>>();
    match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(work)
        }
        None => work(),
    }
}
