use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::run::run_scenario;
use super::summary::median;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    /// Smallest accepted span of `s0 log p / n`, in decades.
    pub min_decades: f64,
    pub threads: Option<usize>,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions { min_decades: 1.0, threads: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub p: usize,
    pub s0: usize,
    /// `s0 log p / n`.
    pub prediction_rate: f64,
    /// `s0 sqrt(log p / n)`.
    pub ell1_rate: f64,
    pub median_prediction_error: Option<f64>,
    pub median_ell1_error: Option<f64>,
    pub runs: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `log median prediction error` on `log(s0 log p / n)`.
    pub prediction_slope: Option<f64>,
    /// Same for the l1 error on `log(s0 sqrt(log p / n))`.
    pub ell1_slope: Option<f64>,
    pub note: Option<String>,
}

/// Least-squares slope of `y` on `x`; `None` when `x` is constant.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs `template` at every `(n, p, s0)` of `grid` and fits the log-log slopes
/// of the median errors against their rates.
///
/// The grid needs at least four distinct values of `s0 log p / n` spanning
/// `min_decades`. A grid with `s0 = 0` everywhere is run, but its slopes are
/// undefined.
pub fn scaling_study(grid: &[(usize, usize, usize)], template: &ScenarioConfig, options: &ScalingOptions) -> Result<ScalingReport> {
    let rate = |&(n, p, s0): &(usize, usize, usize)| s0 as f64 * (p as f64).ln() / n as f64;
    let all_zero = !grid.is_empty() && grid.iter().all(|g| g.2 == 0);
    if !all_zero {
        let mut rates: Vec<f64> = grid.iter().map(rate).collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
        if rates.len() < 4 {
            return Err(Error::DegenerateGrid(format!("need 4 distinct values of s0 log p / n, got {}", rates.len())));
        }
        if rates[0] <= 0.0 {
            return Err(Error::DegenerateGrid("s0 log p / n must be positive at every point".into()));
        }
        let decades = (rates[rates.len() - 1] / rates[0]).log10();
        if decades + 1e-12 < options.min_decades {
            return Err(Error::DegenerateGrid(format!(
                "s0 log p / n spans {decades:.3} decades, need {}",
                options.min_decades
            )));
        }
    }
    let mut points = Vec::with_capacity(grid.len());
    for &(n, p, s0) in grid {
        let mut config = template.clone();
        config.n = n;
        config.p = p;
        config.s0 = s0;
        let records = run_scenario(&config, options.threads)?;
        let fitted: Vec<_> = records.iter().filter(|r| !r.excluded()).collect();
        let preds: Vec<f64> = fitted.iter().filter_map(|r| r.prediction_error).collect();
        let l1s: Vec<f64> = fitted.iter().filter_map(|r| r.ell1_error).collect();
        points.push(ScalingPoint {
            n,
            p,
            s0,
            prediction_rate: rate(&(n, p, s0)),
            ell1_rate: s0 as f64 * ((p as f64).ln() / n as f64).sqrt(),
            median_prediction_error: median(&preds),
            median_ell1_error: median(&l1s),
            runs: fitted.len(),
            excluded: records.len() - fitted.len(),
        });
    }
    let slope = |xs: Vec<f64>, ys: Vec<Option<f64>>| -> Option<f64> {
        let ys: Option<Vec<f64>> = ys.into_iter().collect();
        ys.and_then(|ys| log_log_slope(&xs, &ys))
    };
    let prediction_slope = slope(
        points.iter().map(|p| p.prediction_rate).collect(),
        points.iter().map(|p| p.median_prediction_error).collect(),
    );
    let ell1_slope = slope(points.iter().map(|p| p.ell1_rate).collect(), points.iter().map(|p| p.median_ell1_error).collect());
    let note = (prediction_slope.is_none() || ell1_slope.is_none())
        .then(|| "slope undefined: a rate or a median error is zero".to_string());
    Ok(ScalingReport { points, prediction_slope, ell1_slope, note })
}
