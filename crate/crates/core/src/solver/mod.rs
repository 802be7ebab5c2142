//! l1-penalized empirical risk minimization.
//!
//! [`fit`] minimizes `(1/n) sum rho(Y_i, x_i^T beta) + lambda ||beta||_1`
//! by monotone FISTA with backtracking, alternated with Newton steps on the
//! current support, and stops on the KKT certificate of [`kkt_residual`].
//! Nonsmooth robust losses are replaced by their Moreau-Yosida envelopes
//! along a decreasing smoothing schedule; at each level the iterate is also
//! moved to the vertex interpolating its smallest residuals, which is where
//! piecewise-linear problems attain their minimum.

mod engine;
mod kkt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, IndexSet};
use crate::error::{Error, Result};
use crate::family::Family;
use engine::{fista, l1, newton_polish, soft_threshold, Engine, Oracle};
pub use kkt::{kkt_residual, kkt_residual_with_tol, KktReport, KINK_TOL};

/// Coefficient norm beyond which a restricted fit is declared divergent.
pub const DIVERGENCE_CAP: f64 = 1e6;

/// Design, responses, family and penalty level of one penalized problem.
#[derive(Debug, Clone)]
pub struct PenalizedProblem<'a> {
    design: &'a DesignMatrix,
    response: &'a [f64],
    family: &'a Family,
    lambda: f64,
}

impl<'a> PenalizedProblem<'a> {
    pub fn new(design: &'a DesignMatrix, response: &'a [f64], family: &'a Family, lambda: f64) -> Result<Self> {
        if response.len() != design.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} responses for a design with {} rows",
                response.len(),
                design.n()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive and finite, got {lambda}")));
        }
        for &y in response {
            family.check_response(y)?;
        }
        Ok(PenalizedProblem { design, response, family, lambda })
    }

    pub fn design(&self) -> &DesignMatrix {
        self.design
    }

    pub fn response(&self) -> &[f64] {
        self.response
    }

    pub fn family(&self) -> &Family {
        self.family
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The same problem at another penalty level.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        PenalizedProblem::new(self.design, self.response, self.family, lambda)
    }

    /// `(1/n) sum rho(Y_i, x_i^T beta) + lambda ||beta||_1`.
    pub fn objective(&self, beta: &[f64]) -> Result<f64> {
        let eta = self.design.predict(beta)?;
        let engine = self.engine();
        let risk = engine.risk(&eta, &Oracle::Exact(self.family))?;
        Ok(risk + self.lambda * beta.iter().map(|b| b.abs()).sum::<f64>())
    }

    fn engine(&self) -> Engine<'_> {
        Engine { x: self.design.matrix(), y: self.response }
    }
}

/// Smallest `lambda` with `beta_hat = 0`: `max_j |g_j(0)|`, shrunk by the
/// subdifferential at kinks for nonsmooth losses.
pub fn lambda_max(design: &DesignMatrix, response: &[f64], family: &Family) -> Result<f64> {
    if response.len() != design.n() {
        return Err(Error::ShapeMismatch("response length differs from design rows".into()));
    }
    let x = design.matrix();
    let n = design.n() as f64;
    let eta = DVector::zeros(design.n());
    let (mid, half, _) = kkt::derivative_intervals(family, response, &eta)?;
    let center = x.tr_mul(&mid) / n;
    let radius = x.abs().tr_mul(&half) / n;
    Ok(center
        .iter()
        .zip(radius.iter())
        .map(|(c, r)| (c.abs() - r).max(0.0))
        .fold(0.0, f64::max))
}

/// Moreau-Yosida levels `mu_k = initial * factor^k`, stopping at `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSchedule {
    pub initial: f64,
    pub factor: f64,
    pub floor: f64,
}

impl Default for SmoothingSchedule {
    fn default() -> Self {
        SmoothingSchedule { initial: 1.0, factor: 0.5, floor: 1e-8 }
    }
}

impl SmoothingSchedule {
    pub fn levels(&self) -> Vec<f64> {
        let mut levels = Vec::new();
        let mut mu = self.initial;
        while mu > self.floor {
            levels.push(mu);
            mu *= self.factor;
        }
        levels.push(self.floor);
        levels
    }
}

/// Backtracking parameters: the curvature estimate grows by `increase` on a
/// rejected step and shrinks by `decrease` after each accepted one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub increase: f64,
    pub decrease: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule { increase: 2.0, decrease: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub kkt_tolerance: f64,
    pub max_iterations: usize,
    pub smoothing_schedule: SmoothingSchedule,
    pub step_rule: StepRule,
    /// Keep the accepted objective values in [`FitResult::objective_trace`].
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kkt_tolerance: 1e-6,
            max_iterations: 50_000,
            smoothing_schedule: SmoothingSchedule::default(),
            step_rule: StepRule::default(),
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.smoothing_schedule;
        if !(self.kkt_tolerance > 0.0 && self.kkt_tolerance.is_finite()) {
            return Err(Error::InvalidParameter("kkt_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be positive".into()));
        }
        if !(s.initial > 0.0 && s.floor > 0.0 && s.floor <= s.initial && s.factor > 0.0 && s.factor < 1.0) {
            return Err(Error::InvalidParameter(
                "smoothing schedule needs 0 < floor <= initial and 0 < factor < 1".into(),
            ));
        }
        let r = &self.step_rule;
        if !(r.increase > 1.0 && r.decrease > 0.0 && r.decrease <= 1.0) {
            return Err(Error::InvalidParameter("step rule needs increase > 1 and 0 < decrease <= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub active_set: IndexSet,
    pub kkt_sup_violation: f64,
    pub kkt_sign_violation: f64,
    pub sign_consistency_ok: bool,
    pub iterations: usize,
    pub objective: f64,
    pub lambda: f64,
    /// False when the iteration budget ran out before the certificate held;
    /// `beta` is then the best iterate found.
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
    /// Trace positions where a new smoothing level started.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub level_starts: Vec<usize>,
}

struct Best {
    beta: DVector<f64>,
    objective: f64,
    worst: f64,
    report: KktReport,
}

impl Best {
    fn consider(&mut self, problem: &PenalizedProblem, beta: DVector<f64>, tol: f64) -> Result<bool> {
        let objective = problem.objective(beta.as_slice())?;
        let report = kkt_residual_with_tol(problem, beta.as_slice(), tol)?;
        let worst = report.worst();
        let better = if (worst <= tol) != (self.worst <= tol) {
            worst <= tol
        } else {
            objective < self.objective || (objective == self.objective && worst < self.worst)
        };
        if better {
            *self = Best { beta, objective, worst, report };
        }
        Ok(self.worst <= tol)
    }
}

pub fn fit(problem: &PenalizedProblem, config: &SolverConfig) -> Result<FitResult> {
    config.validate()?;
    let tol = config.kkt_tolerance;
    let p = problem.design().p();
    let zero = DVector::zeros(p);
    let report = kkt_residual_with_tol(problem, zero.as_slice(), tol)?;
    let mut best = Best {
        objective: problem.objective(zero.as_slice())?,
        worst: report.worst(),
        report,
        beta: zero,
    };
    let mut trace = Vec::new();
    let mut level_starts = Vec::new();
    let mut iterations = 0;
    if best.worst > tol {
        if problem.family().is_smooth() {
            iterations = fit_smooth(problem, config, &mut best, &mut trace)?;
        } else {
            iterations = fit_nonsmooth(problem, config, &mut best, &mut trace, &mut level_starts)?;
        }
    }
    let beta: Vec<f64> = best.beta.iter().copied().collect();
    Ok(FitResult {
        active_set: IndexSet::support(&beta),
        kkt_sup_violation: best.report.sup_violation,
        kkt_sign_violation: best.report.sign_violation,
        sign_consistency_ok: best.report.sign_ok,
        iterations,
        objective: best.objective,
        lambda: problem.lambda(),
        converged: best.worst <= tol,
        beta,
        objective_trace: if config.record_trace { trace } else { Vec::new() },
        level_starts: if config.record_trace { level_starts } else { Vec::new() },
    })
}

const ROUND: usize = 200;

fn fit_smooth(problem: &PenalizedProblem, config: &SolverConfig, best: &mut Best, trace: &mut Vec<f64>) -> Result<usize> {
    let engine = problem.engine();
    let oracle = Oracle::Exact(problem.family());
    let lambda = problem.lambda();
    let tol = config.kkt_tolerance;
    let mut lipschitz = engine.gram_norm().max(1e-12);
    let mut beta = best.beta.clone();
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let budget = ROUND.min(config.max_iterations - iterations);
        let outcome = fista(
            &engine,
            &oracle,
            lambda,
            beta,
            0.1 * tol,
            budget,
            &mut lipschitz,
            &config.step_rule,
            Some(trace),
        )?;
        iterations += outcome.iterations;
        beta = outcome.beta;
        if let Some((polished, f)) = newton_polish(&engine, &oracle, lambda, &beta, 1e-12 * lambda, 50)? {
            beta = polished;
            trace.push(f);
        }
        if best.consider(problem, beta.clone(), tol)? {
            break;
        }
    }
    Ok(iterations)
}

fn fit_nonsmooth(
    problem: &PenalizedProblem,
    config: &SolverConfig,
    best: &mut Best,
    trace: &mut Vec<f64>,
    level_starts: &mut Vec<usize>,
) -> Result<usize> {
    let Family::Robust(loss) = problem.family() else {
        return Err(Error::Solver("nonsmooth path needs a robust loss".into()));
    };
    let engine = problem.engine();
    let lambda = problem.lambda();
    let tol = config.kkt_tolerance;
    let levels = config.smoothing_schedule.levels();
    let per_level = (config.max_iterations / levels.len()).max(ROUND);
    let gram_norm = engine.gram_norm().max(1e-12);
    let mut beta = best.beta.clone();
    let mut iterations = 0;
    for mu in levels {
        level_starts.push(trace.len());
        let smoothed = loss.smoothed(mu);
        let oracle = Oracle::Smoothed(smoothed);
        let mut lipschitz = gram_norm * smoothed.curvature_bound();
        let outcome = fista(
            &engine,
            &oracle,
            lambda,
            beta,
            0.1 * tol,
            per_level,
            &mut lipschitz,
            &config.step_rule,
            Some(trace),
        )?;
        iterations += outcome.iterations;
        beta = outcome.beta;
        if let Some((polished, _)) = newton_polish(&engine, &oracle, lambda, &beta, 1e-12 * lambda, 20)? {
            beta = polished;
        }
        if let Some(vertex) = vertex_polish(&engine, problem.family(), lambda, &beta)? {
            if best.consider(problem, vertex, tol)? {
                break;
            }
        }
        if best.consider(problem, beta.clone(), tol)? {
            break;
        }
    }
    Ok(iterations)
}

/// Moves `beta` to the point that interpolates the `|support|` observations
/// with the smallest residuals, keeping the support. Returns it when the
/// exact objective does not increase.
fn vertex_polish(engine: &Engine, family: &Family, lambda: f64, beta: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    let k = active.len();
    let n = engine.y.len();
    if k == 0 || k > n {
        return Ok(None);
    }
    let eta = engine.eta(beta);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = (engine.y[a] - eta[a]).abs();
        let rb = (engine.y[b] - eta[b]).abs();
        ra.total_cmp(&rb).then(a.cmp(&b))
    });
    let rows = &order[..k];
    let a = DMatrix::from_fn(k, k, |r, c| engine.x[(rows[r], active[c])]);
    let rhs = DVector::from_fn(k, |r, _| engine.y[rows[r]]);
    let Some(solution) = a.lu().solve(&rhs) else {
        return Ok(None);
    };
    let mut candidate = DVector::zeros(beta.len());
    for (c, &j) in active.iter().enumerate() {
        candidate[j] = solution[c];
    }
    if candidate.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let oracle = Oracle::Exact(family);
    let f_old = engine.risk(&eta, &oracle)? + lambda * l1(beta);
    let f_new = engine.risk(&engine.eta(&candidate), &oracle)? + lambda * l1(&candidate);
    Ok((f_new <= f_old * (1.0 + 1e-12)).then_some(candidate))
}

/// Result of the unpenalized fit on a fixed support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedFit {
    pub beta: Vec<f64>,
    /// Sup-norm of the (sub)gradient of the risk on `S`, after widening by
    /// the subdifferential at kinks.
    pub gradient_sup: f64,
    pub iterations: usize,
    /// False when `X_S` is rank deficient, so the minimizer is not unique.
    pub unique: bool,
}

/// Minimizes the unpenalized empirical risk over `{beta : beta_{S^c} = 0}`.
///
/// Least squares goes through the normal equations; other smooth losses use
/// damped Newton steps; piecewise-linear losses use smoothing continuation
/// followed by the interpolating vertex. A coefficient norm above
/// [`DIVERGENCE_CAP`] (separable logistic data) is an error.
pub fn restricted_fit(problem: &PenalizedProblem, set: &IndexSet) -> Result<RestrictedFit> {
    let design = problem.design();
    let p = design.p();
    if set.indices().iter().any(|&j| j >= p) {
        return Err(Error::InvalidParameter(format!("S has an index beyond p = {p}")));
    }
    if set.is_empty() {
        return Ok(RestrictedFit { beta: vec![0.0; p], gradient_sup: 0.0, iterations: 0, unique: true });
    }
    let xs = design.matrix().select_columns(set.indices());
    let y = problem.response();
    let engine = Engine { x: &xs, y };
    let rank = xs.clone().svd(false, false).rank(1e-12 * xs.amax().max(1e-300) * xs.nrows().max(xs.ncols()) as f64);
    let unique = rank == set.len();
    let family = problem.family();
    let (coef, iterations) = match family {
        Family::Quasi(q) if q.name() == "gaussian" => {
            let rhs = DVector::from_column_slice(y);
            let svd = xs.clone().svd(true, true);
            let coef = svd
                .solve(&rhs, 1e-12 * svd.singular_values.max())
                .map_err(|e| Error::Solver(e.to_string()))?;
            (coef, 1)
        }
        _ if family.is_smooth() => {
            let (coef, used) = newton_unpenalized(&engine, &Oracle::Exact(family), DVector::zeros(set.len()), 1e-10)?;
            if is_binary(family) && separates(&xs, y, &coef) {
                return Err(Error::Divergence { norm: f64::INFINITY, cap: DIVERGENCE_CAP });
            }
            (coef, used)
        }
        Family::Robust(loss) => {
            let mut coef = DVector::zeros(set.len());
            let mut iterations = 0;
            for mu in SmoothingSchedule::default().levels() {
                let oracle = Oracle::Smoothed(loss.smoothed(mu));
                let (next, used) = newton_unpenalized(&engine, &oracle, coef, 1e-12)?;
                coef = next;
                iterations += used;
            }
            if let Some(vertex) = vertex_polish(&engine, family, 0.0, &coef)? {
                coef = vertex;
            }
            (coef, iterations)
        }
        Family::Quasi(_) => unreachable!("quasi families are smooth"),
    };
    if coef.norm() > DIVERGENCE_CAP {
        return Err(Error::Divergence { norm: coef.norm(), cap: DIVERGENCE_CAP });
    }
    let mut beta = vec![0.0; p];
    for (k, j) in set.iter().enumerate() {
        beta[j] = coef[k];
    }
    let eta = engine.eta(&coef);
    let (mid, half, _) = kkt::derivative_intervals(family, y, &eta)?;
    let n = y.len() as f64;
    let center = xs.tr_mul(&mid) / n;
    let radius = xs.abs().tr_mul(&half) / n;
    let gradient_sup = center
        .iter()
        .zip(radius.iter())
        .map(|(c, r)| (c.abs() - r).max(0.0))
        .fold(0.0, f64::max);
    Ok(RestrictedFit { beta, gradient_sup, iterations, unique })
}

fn is_binary(family: &Family) -> bool {
    match family {
        Family::Quasi(q) => q.mean_domain() == (0.0, 1.0),
        Family::Robust(r) => r.kind() == crate::family::RobustKind::Logistic,
    }
}

/// True when the direction of `coef` weakly separates the labels with at
/// least one strict margin. The binary risk then decreases along the whole
/// ray, so no finite minimizer exists.
fn separates(x: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> bool {
    let norm = coef.norm();
    if norm == 0.0 {
        return false;
    }
    let eta = x * coef / norm;
    let mut strict = false;
    for (i, &e) in eta.iter().enumerate() {
        let margin = (2.0 * y[i] - 1.0) * e;
        let scale = x.row(i).norm().max(1e-300);
        if margin < -1e-12 * scale {
            return false;
        }
        strict |= margin > 1e-9 * scale;
    }
    strict
}

/// Damped Newton on the unpenalized risk with Armijo backtracking.
fn newton_unpenalized(engine: &Engine, oracle: &Oracle, start: DVector<f64>, tol: f64) -> Result<(DVector<f64>, usize)> {
    let all: Vec<usize> = (0..start.len()).collect();
    let mut beta = start;
    let mut eta = engine.eta(&beta);
    let mut f = engine.risk(&eta, oracle)?;
    let mut iterations = 0;
    for _ in 0..500 {
        let grad = engine.gradient(&eta, oracle)?;
        if grad.amax() <= tol {
            break;
        }
        iterations += 1;
        let mut hess = engine.hessian(&eta, oracle, &all)?;
        let ridge = 1e-10 * hess.diagonal().amax().max(1e-12);
        for k in 0..all.len() {
            hess[(k, k)] += ridge;
        }
        let direction = match hess.cholesky() {
            Some(chol) => -chol.solve(&grad),
            None => -grad.clone(),
        };
        let slope = grad.dot(&direction);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let candidate = &beta + step * &direction;
            let eta_c = engine.eta(&candidate);
            if let Ok(fc) = engine.risk(&eta_c, oracle) {
                if fc <= f + 1e-4 * step * slope {
                    beta = candidate;
                    eta = eta_c;
                    f = fc;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if beta.norm() > DIVERGENCE_CAP {
            return Err(Error::Divergence { norm: beta.norm(), cap: DIVERGENCE_CAP });
        }
        if !moved {
            break;
        }
    }
    Ok((beta, iterations))
}

/// Closed-form Lasso for an orthonormal design (`X^T X / n = I`) under the
/// objective `||Y - X beta||_n^2 + lambda ||beta||_1`: soft thresholding of
/// `z = X^T Y / n` at `lambda / 2`.
///
/// Under the crate's loss `(y - z)^2 / 2` the same solution is returned by
/// [`fit`] at penalty `lambda / 2`.
pub fn soft_threshold_fit(design: &DesignMatrix, response: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if response.len() != design.n() {
        return Err(Error::ShapeMismatch("response length differs from design rows".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let gram = design.gram();
    let deviation = (&gram - DMatrix::identity(gram.nrows(), gram.ncols())).amax();
    if deviation > 1e-8 {
        return Err(Error::InvalidParameter(format!(
            "design is not orthonormal: max |X^T X/n - I| = {deviation:e}"
        )));
    }
    let z = design.matrix().tr_mul(&DVector::from_column_slice(response)) / design.n() as f64;
    Ok(z.iter().map(|&v| soft_threshold(v, lambda / 2.0)).collect())
}
