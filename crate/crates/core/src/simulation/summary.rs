use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, TheoremKind};
use super::run::RunRecord;
use crate::error::{Error, Result};

/// Aggregates for one theorem over a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSummary {
    pub theorem: TheoremKind,
    /// Runs with a fit (failures excluded).
    pub runs: usize,
    pub excluded: usize,
    pub event_count: usize,
    pub event_frequency: Option<f64>,
    pub hypothesis_count: usize,
    pub pass_count: usize,
    /// Passes among runs whose hypotheses hold; undefined without such runs.
    pub conditional_pass_rate: Option<f64>,
    /// Mean `alpha(t)` of the probabilistic theorems.
    pub alpha: Option<f64>,
    /// Whether the event frequency reaches `1 - alpha - 3 se`.
    pub event_meets_confidence: Option<bool>,
    /// Largest admissible failure fraction among hypothesis runs: zero for
    /// the deterministic theorems, `alpha + 3 sqrt(alpha (1 - alpha) / R)` otherwise.
    pub failure_limit: Option<f64>,
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    pub family: String,
    pub replications: usize,
    pub excluded: usize,
    pub median_prediction_error: Option<f64>,
    pub median_ell1_error: Option<f64>,
    pub median_oracle_prediction_error: Option<f64>,
    pub mean_true_positives: Option<f64>,
    pub mean_false_positives: Option<f64>,
    pub kkt_certified: usize,
    /// Runs where the true-positive count bound held for every `eta`.
    pub true_positive_bound_holds: usize,
    pub theorems: Vec<TheoremSummary>,
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// `alpha + 3 sqrt(alpha (1 - alpha) / r)`.
pub fn binomial_limit(alpha: f64, r: usize) -> f64 {
    let a = alpha.clamp(0.0, 1.0);
    a + 3.0 * (a * (1.0 - a) / r.max(1) as f64).sqrt()
}

/// Event frequencies and conditional pass rates per theorem.
///
/// Records are sorted by replication first, so the result does not depend
/// on the order they were produced in.
pub fn verify_theorems(records: &[RunRecord], config: &ScenarioConfig) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no records to summarize".into()));
    }
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.replication);
    let fitted: Vec<&RunRecord> = sorted.iter().copied().filter(|r| !r.excluded()).collect();
    let excluded = sorted.len() - fitted.len();

    let mut kinds: Vec<TheoremKind> = sorted.iter().flat_map(|r| r.checks.iter().map(|c| c.theorem)).collect();
    kinds.sort();
    kinds.dedup();
    let theorems = kinds.into_iter().map(|k| summarize(k, &fitted, excluded)).collect();

    let collect = |f: fn(&RunRecord) -> Option<f64>| -> Vec<f64> { fitted.iter().filter_map(|r| f(r)).collect() };
    Ok(Summary {
        n: config.n,
        p: config.p,
        s0: config.s0,
        family: config.family.to_string(),
        replications: sorted.len(),
        excluded,
        median_prediction_error: median(&collect(|r| r.prediction_error)),
        median_ell1_error: median(&collect(|r| r.ell1_error)),
        median_oracle_prediction_error: median(&collect(|r| r.oracle_prediction_error)),
        mean_true_positives: mean(fitted.iter().filter_map(|r| r.true_positives.map(|v| v as f64))),
        mean_false_positives: mean(fitted.iter().filter_map(|r| r.false_positives.map(|v| v as f64))),
        kkt_certified: fitted.iter().filter(|r| r.kkt_certified == Some(true)).count(),
        true_positive_bound_holds: fitted.iter().filter(|r| r.true_positive_bound == Some(true)).count(),
        theorems,
    })
}

fn summarize(kind: TheoremKind, fitted: &[&RunRecord], excluded: usize) -> TheoremSummary {
    let checks: Vec<_> = fitted.iter().filter_map(|r| r.check(kind)).collect();
    let runs = checks.len();
    let event_count = checks.iter().filter(|c| c.event).count();
    let hyp: Vec<_> = checks.iter().filter(|c| c.hypotheses).collect();
    let pass_count = hyp.iter().filter(|c| c.conclusion).count();
    let conditional_pass_rate = (!hyp.is_empty()).then(|| pass_count as f64 / hyp.len() as f64);
    let event_frequency = (runs > 0).then(|| event_count as f64 / runs as f64);
    let alpha = if kind.is_deterministic() {
        None
    } else {
        let pool: Vec<_> = if hyp.is_empty() { checks.iter().collect() } else { hyp.clone() };
        mean(pool.iter().filter_map(|c| c.alpha))
    };
    let event_meets_confidence = match (alpha, event_frequency) {
        (Some(a), Some(f)) => {
            let a = a.clamp(0.0, 1.0);
            Some(f >= 1.0 - binomial_limit(a, runs))
        }
        _ => None,
    };
    let failure_limit = if kind.is_deterministic() {
        Some(0.0)
    } else {
        alpha.map(|a| binomial_limit(a, hyp.len()))
    };
    let passed = match (conditional_pass_rate, failure_limit) {
        (Some(rate), Some(limit)) => Some(1.0 - rate <= limit),
        _ => None,
    };
    TheoremSummary {
        theorem: kind,
        runs,
        excluded,
        event_count,
        event_frequency,
        hypothesis_count: hyp.len(),
        pass_count,
        conditional_pass_rate,
        alpha,
        event_meets_confidence,
        failure_limit,
        passed,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6e}"))
}

impl Summary {
    pub fn theorem(&self, kind: TheoremKind) -> Option<&TheoremSummary> {
        self.theorems.iter().find(|t| t.theorem == kind)
    }

    /// Plain-text table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "scenario: family={} n={} p={} s0={} replications={} excluded={}\n",
            self.family, self.n, self.p, self.s0, self.replications, self.excluded
        );
        out.push_str(&format!("median prediction error: {}\n", opt(self.median_prediction_error)));
        out.push_str(&format!("median l1 error:         {}\n", opt(self.median_ell1_error)));
        out.push_str(&format!("median oracle prediction error: {}\n", opt(self.median_oracle_prediction_error)));
        out.push_str(&format!(
            "mean true/false positives: {} / {}\n",
            opt(self.mean_true_positives),
            opt(self.mean_false_positives)
        ));
        out.push_str(&format!("{:<6} {:>6} {:>8} {:>10} {:>12} {:>14} {:>12} {:>8}\n", "thm", "runs", "events", "hypotheses", "passes", "cond. rate", "alpha", "status"));
        for t in &self.theorems {
            let status = match t.passed {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "n/a",
            };
            out.push_str(&format!(
                "{:<6} {:>6} {:>8} {:>10} {:>12} {:>14} {:>12} {:>8}\n",
                format!("{:?}", t.theorem).to_lowercase(),
                t.runs,
                t.event_count,
                t.hypothesis_count,
                t.pass_count,
                t.conditional_pass_rate.map_or("undefined".into(), |r| format!("{r:.4}")),
                t.alpha.map_or("-".into(), |a| format!("{a:.3e}")),
                status
            ));
        }
        out
    }
}
