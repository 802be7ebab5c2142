//! Compatibility constants, restricted eigenvalues and effective sparsity.
//!
//! Fixing the signs `sigma_j` of `beta_S` turns the compatibility problem
//! into a convex QP in `a = sigma * beta_S` (on the simplex) and
//! `b = beta_{S^c}` (in the l1-ball of radius `L`). Because the objective is
//! invariant under `beta -> -beta`, only the `2^(s-1)` patterns with
//! `sigma_first = +1` need solving.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qp::{QpOptions, QpSolution, SimplexBallQp};
use super::{DesignMatrix, IndexSet};
use crate::error::{Error, Result};

/// Largest `|S|` solved by exhaustive sign enumeration.
pub const DEFAULT_S_MAX: usize = 12;

const TIE_TOL: f64 = 1e-9;
const CCP_MAX_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompatibilityMethod {
    ExactQpEnumeration,
    ProjectedSearch,
}

#[derive(Debug, Clone)]
pub struct CompatibilityOptions {
    pub s_max: usize,
    /// Forces a method; `None` picks exact enumeration when `s <= s_max`.
    pub method: Option<CompatibilityMethod>,
    pub restarts: usize,
    pub seed: u64,
    pub qp: QpOptions,
}

impl Default for CompatibilityOptions {
    fn default() -> Self {
        CompatibilityOptions {
            s_max: DEFAULT_S_MAX,
            method: None,
            restarts: 50,
            seed: 0x5eed,
            qp: QpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityResult {
    pub phi_sq: f64,
    pub minimizer: Vec<f64>,
    pub method: CompatibilityMethod,
    /// Upper bound on `phi_sq - true minimum` for exact enumeration; for the
    /// search method only the gap of the reported pattern.
    pub certificate_gap: f64,
    /// Patterns (up to global sign) whose optimum lies within `1e-9` of the best.
    pub tied_patterns: usize,
    pub patterns_solved: usize,
    /// True when exact enumeration was requested but `s > s_max`.
    pub fell_back: bool,
}

/// Per-problem data shared by all sign patterns.
struct Patterns<'a> {
    gram: DMatrix<f64>,
    set: &'a IndexSet,
    complement: IndexSet,
    radius: f64,
    lipschitz: f64,
}

impl<'a> Patterns<'a> {
    fn new(design: &DesignMatrix, set: &'a IndexSet, radius: f64) -> Result<Self> {
        let p = design.p();
        let s = set.len();
        if s == 0 {
            return Err(Error::InvalidParameter("S must be nonempty".into()));
        }
        if set.indices().iter().any(|&j| j >= p) {
            return Err(Error::InvalidParameter(format!("S has an index beyond p = {p}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("L must be positive and finite, got {radius}")));
        }
        let gram = design.gram();
        let lambda_max = gram.clone().symmetric_eigen().eigenvalues.max().max(0.0);
        Ok(Patterns {
            gram,
            set,
            complement: set.complement(p),
            radius,
            lipschitz: 2.0 * lambda_max * (1.0 + 1e-12),
        })
    }

    fn s(&self) -> usize {
        self.set.len()
    }

    /// Column order of the QP variables: `S` first, then `S^c`.
    fn order(&self) -> Vec<usize> {
        self.set.iter().chain(self.complement.iter()).collect()
    }

    fn signs(&self, pattern: u64) -> Vec<f64> {
        (0..self.s())
            .map(|k| if k > 0 && pattern >> (k - 1) & 1 == 1 { -1.0 } else { 1.0 })
            .collect()
    }

    fn quadratic(&self, signs: &[f64]) -> DMatrix<f64> {
        let order = self.order();
        let m = order.len();
        let s = self.s();
        let sign = |k: usize| if k < s { signs[k] } else { 1.0 };
        DMatrix::from_fn(m, m, |r, c| sign(r) * sign(c) * self.gram[(order[r], order[c])])
    }

    fn to_beta(&self, signs: &[f64], x: &DVector<f64>, p: usize) -> Vec<f64> {
        let mut beta = vec![0.0; p];
        for (k, j) in self.order().into_iter().enumerate() {
            beta[j] = if k < signs.len() { signs[k] * x[k] } else { x[k] };
        }
        beta
    }

    fn solve(&self, signs: &[f64], start: Option<&DVector<f64>>, options: &QpOptions) -> QpSolution {
        let q = self.quadratic(signs);
        let qp = SimplexBallQp::new(&q, DVector::zeros(q.nrows()), self.s(), self.radius, self.lipschitz);
        qp.solve(start, options)
    }
}

pub fn compatibility_constant(design: &DesignMatrix, set: &IndexSet, l: f64) -> Result<CompatibilityResult> {
    compatibility_constant_with(design, set, l, &CompatibilityOptions::default())
}

/// `phi^2(L, S) = min { s ||X beta||_n^2 : ||beta_S||_1 = 1, ||beta_{S^c}||_1 <= L }`.
pub fn compatibility_constant_with(
    design: &DesignMatrix,
    set: &IndexSet,
    l: f64,
    options: &CompatibilityOptions,
) -> Result<CompatibilityResult> {
    let patterns = Patterns::new(design, set, l)?;
    let s = set.len();
    let requested = options.method.unwrap_or(if s <= options.s_max {
        CompatibilityMethod::ExactQpEnumeration
    } else {
        CompatibilityMethod::ProjectedSearch
    });
    let fell_back = s > options.s_max && options.method != Some(CompatibilityMethod::ProjectedSearch);
    let mut result = if requested == CompatibilityMethod::ExactQpEnumeration && s <= options.s_max {
        exact(&patterns, design.p(), options)
    } else {
        projected_search(&patterns, design.p(), options)
    };
    result.fell_back = fell_back;
    Ok(result)
}

fn exact(patterns: &Patterns, p: usize, options: &CompatibilityOptions) -> CompatibilityResult {
    let s = patterns.s();
    let count = 1_u64 << (s - 1);
    let solutions: Vec<(Vec<f64>, QpSolution)> = (0..count)
        .into_par_iter()
        .map(|pattern| {
            let signs = patterns.signs(pattern);
            let sol = patterns.solve(&signs, None, &options.qp);
            (signs, sol)
        })
        .collect();
    // sequential reduction keeps the first best pattern regardless of scheduling
    let mut best = 0;
    for (k, (_, sol)) in solutions.iter().enumerate() {
        if sol.objective < solutions[best].1.objective {
            best = k;
        }
    }
    let best_value = solutions[best].1.objective;
    let lower = solutions
        .iter()
        .map(|(_, sol)| sol.objective - sol.gap)
        .fold(f64::INFINITY, f64::min);
    let tie_scale = TIE_TOL * best_value.abs().max(patterns.lipschitz * 1e-3).max(1e-300);
    let tied_patterns = solutions
        .iter()
        .filter(|(_, sol)| sol.objective <= best_value + tie_scale)
        .count();
    let (signs, sol) = &solutions[best];
    let minimizer = patterns.to_beta(signs, &sol.x, p);
    CompatibilityResult {
        phi_sq: s as f64 * best_value.max(0.0),
        minimizer,
        method: CompatibilityMethod::ExactQpEnumeration,
        certificate_gap: s as f64 * (best_value - lower).max(0.0),
        tied_patterns,
        patterns_solved: solutions.len(),
        fell_back: false,
    }
}

/// Multi-start local search over sign patterns: each start solves its QP,
/// then flips the sign of coordinates of `beta_S` that sit at zero while that
/// improves the objective.
fn projected_search(patterns: &Patterns, p: usize, options: &CompatibilityOptions) -> CompatibilityResult {
    let s = patterns.s();
    let restarts = options.restarts.max(1);
    let runs: Vec<(Vec<f64>, QpSolution, usize)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(r as u64);
            let mut signs: Vec<f64> = (0..s)
                .map(|k| if k == 0 || rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            let mut sol = patterns.solve(&signs, None, &options.qp);
            let mut solved = 1;
            let mut improved = true;
            while improved {
                improved = false;
                let mut order: Vec<usize> = (1..s).collect();
                order.shuffle(&mut rng);
                for k in order {
                    if sol.x[k] > 1e-12 {
                        continue;
                    }
                    let mut flipped = signs.clone();
                    flipped[k] = -flipped[k];
                    let candidate = patterns.solve(&flipped, Some(&sol.x), &options.qp);
                    solved += 1;
                    if candidate.objective < sol.objective * (1.0 - 1e-12) - 1e-300 {
                        signs = flipped;
                        sol = candidate;
                        improved = true;
                    }
                }
            }
            (signs, sol, solved)
        })
        .collect();
    let mut best = 0;
    for (k, (_, sol, _)) in runs.iter().enumerate() {
        if sol.objective < runs[best].1.objective {
            best = k;
        }
    }
    let best_value = runs[best].1.objective;
    let tie_scale = TIE_TOL * best_value.abs().max(patterns.lipschitz * 1e-3).max(1e-300);
    let mut tied: Vec<Vec<i8>> = runs
        .iter()
        .filter(|(_, sol, _)| sol.objective <= best_value + tie_scale)
        .map(|(signs, _, _)| signs.iter().map(|&v| v as i8).collect())
        .collect();
    tied.sort();
    tied.dedup();
    let (signs, sol, _) = &runs[best];
    CompatibilityResult {
        phi_sq: s as f64 * best_value.max(0.0),
        minimizer: patterns.to_beta(signs, &sol.x, p),
        method: CompatibilityMethod::ProjectedSearch,
        certificate_gap: s as f64 * sol.gap,
        tied_patterns: tied.len(),
        patterns_solved: runs.iter().map(|r| r.2).sum(),
        fell_back: false,
    }
}

/// `phi_RE^2(L, S) = min { ||X beta||_n^2 / ||beta_S||_2^2 : ||beta_{S^c}||_1 <= L ||beta_S||_1 }`.
///
/// The ratio is minimized per sign pattern by a convex-concave procedure:
/// at ratio `r` the concave term `-r ||a||^2` is linearized and the resulting
/// QP re-solved, which never increases the ratio. Each pattern starts from
/// its compatibility minimizer (so the result never exceeds `phi^2(L, S)`)
/// and, for small `s`, also from the vertices of the simplex.
pub fn restricted_eigenvalue(design: &DesignMatrix, set: &IndexSet, l: f64) -> Result<f64> {
    restricted_eigenvalue_with(design, set, l, &CompatibilityOptions::default())
}

pub fn restricted_eigenvalue_with(
    design: &DesignMatrix,
    set: &IndexSet,
    l: f64,
    options: &CompatibilityOptions,
) -> Result<f64> {
    let patterns = Patterns::new(design, set, l)?;
    let s = set.len();
    let sign_sets: Vec<Vec<f64>> = if s <= options.s_max {
        (0..1_u64 << (s - 1)).map(|k| patterns.signs(k)).collect()
    } else {
        let compat = projected_search(&patterns, design.p(), options);
        let signs = set
            .iter()
            .enumerate()
            .map(|(k, j)| if k == 0 || compat.minimizer[j] >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        vec![signs]
    };
    let vertex_starts = s <= 6;
    let values: Vec<f64> = sign_sets
        .par_iter()
        .map(|signs| {
            let q = patterns.quadratic(signs);
            let m = q.nrows();
            let compat = patterns.solve(signs, None, &options.qp);
            let mut best = ccp(&patterns, &q, compat.x, &options.qp);
            if vertex_starts {
                for k in 0..s {
                    let mut start = DVector::zeros(m);
                    start[k] = 1.0;
                    best = best.min(ccp(&patterns, &q, start, &options.qp));
                }
            }
            best
        })
        .collect();
    Ok(values.into_iter().fold(f64::INFINITY, f64::min).max(0.0))
}

fn ratio(q: &DMatrix<f64>, x: &DVector<f64>, s: usize) -> f64 {
    let a_sq = x.rows(0, s).norm_squared();
    x.dot(&(q * x)) / a_sq
}

fn ccp(patterns: &Patterns, q: &DMatrix<f64>, start: DVector<f64>, options: &QpOptions) -> f64 {
    let s = patterns.s();
    let m = q.nrows();
    let mut x = start;
    let mut r = ratio(q, &x, s);
    for _ in 0..CCP_MAX_STEPS {
        if r <= 0.0 {
            return 0.0;
        }
        let mut c = DVector::zeros(m);
        for k in 0..s {
            c[k] = -2.0 * r * x[k];
        }
        let qp = SimplexBallQp::new(q, c, s, patterns.radius, patterns.lipschitz);
        let sol = qp.solve(Some(&x), options);
        let next = ratio(q, &sol.x, s);
        if !(next < r * (1.0 - 1e-13)) {
            break;
        }
        x = sol.x;
        r = next;
    }
    r
}

/// `Gamma_eff(S) = s / phi^2(3, S)`.
pub fn effective_sparsity(design: &DesignMatrix, set: &IndexSet) -> Result<f64> {
    let result = compatibility_constant(design, set, 3.0)?;
    let gram = design.gram();
    let max_diag = (0..gram.nrows()).map(|j| gram[(j, j)]).fold(0.0, f64::max);
    if result.phi_sq <= 1e-12 * set.len() as f64 * max_diag.max(f64::MIN_POSITIVE) {
        return Err(Error::CompatibilityFails { phi_sq: result.phi_sq });
    }
    Ok(set.len() as f64 / result.phi_sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(first: bool) -> DesignMatrix {
        let n = 2.0_f64;
        let r = n.sqrt();
        let (a, b) = if first { (5.0 / 13.0, 12.0 / 13.0) } else { (12.0 / 13.0, 5.0 / 13.0) };
        DesignMatrix::from_rows(&[vec![r * a, 0.0, r], vec![r * b, r, 0.0]]).unwrap()
    }

    fn orthonormal(n: usize, p: usize, seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() - 0.5);
        let q = raw.qr().q();
        DesignMatrix::new(q * (n as f64).sqrt()).unwrap()
    }

    #[test]
    fn worked_example_values() {
        let set = IndexSet::new(vec![2], 3).unwrap();
        let first = compatibility_constant(&example(true), &set, 3.0).unwrap();
        assert!((first.phi_sq - 2.0 / 13.0).abs() < 1e-10, "{first:?}");
        let second = compatibility_constant(&example(false), &set, 3.0).unwrap();
        assert!(second.phi_sq < 1e-10, "{second:?}");
        assert!((effective_sparsity(&example(true), &set).unwrap() - 6.5).abs() < 1e-9);
        assert!(matches!(
            effective_sparsity(&example(false), &set),
            Err(Error::CompatibilityFails { .. })
        ));
    }

    #[test]
    fn minimizer_is_feasible() {
        let set = IndexSet::new(vec![2], 3).unwrap();
        let res = compatibility_constant(&example(true), &set, 3.0).unwrap();
        let x = example(true);
        let beta = &res.minimizer;
        assert!((beta[2].abs() - 1.0).abs() < 1e-9);
        assert!(beta[0].abs() + beta[1].abs() <= 3.0 + 1e-9);
        let fit = x.predict(beta).unwrap();
        assert!((fit.norm_squared() / 2.0 - res.phi_sq).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_design_gives_one() {
        let x = orthonormal(12, 6, 1);
        for s in 1..=4 {
            let set = IndexSet::new((0..s).collect(), 6).unwrap();
            let res = compatibility_constant(&x, &set, 3.0).unwrap();
            assert!((res.phi_sq - 1.0).abs() < 1e-8, "s = {s}: {}", res.phi_sq);
            let re = restricted_eigenvalue(&x, &set, 3.0).unwrap();
            assert!((re - 1.0).abs() < 1e-8, "s = {s}: {re}");
        }
        let set = IndexSet::new(vec![0, 2, 3, 5], 6).unwrap();
        assert!((effective_sparsity(&x, &set).unwrap() - 4.0).abs() < 1e-7);
    }

    #[test]
    fn restricted_eigenvalue_below_compatibility() {
        let set = IndexSet::new(vec![2], 3).unwrap();
        let re = restricted_eigenvalue(&example(true), &set, 3.0).unwrap();
        assert!(re > 0.0 && re <= 2.0 / 13.0 + 1e-10, "{re}");
        let zero = DesignMatrix::new(DMatrix::zeros(4, 3)).unwrap();
        assert_eq!(restricted_eigenvalue(&zero, &set, 3.0).unwrap(), 0.0);
        assert_eq!(compatibility_constant(&zero, &set, 3.0).unwrap().phi_sq, 0.0);
    }

    #[test]
    fn search_agrees_with_exact_on_small_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DesignMatrix::new(DMatrix::from_fn(6, 10, |_, _| rng.random::<f64>() * 2.0 - 1.0)).unwrap();
        let set = IndexSet::new(vec![1, 4, 7], 10).unwrap();
        let exact = compatibility_constant(&x, &set, 3.0).unwrap();
        let options = CompatibilityOptions {
            method: Some(CompatibilityMethod::ProjectedSearch),
            ..Default::default()
        };
        let search = compatibility_constant_with(&x, &set, 3.0, &options).unwrap();
        assert_eq!(search.method, CompatibilityMethod::ProjectedSearch);
        assert!((exact.phi_sq - search.phi_sq).abs() < 1e-5);
    }

    #[test]
    fn large_support_falls_back() {
        let x = orthonormal(16, 4, 3);
        let set = IndexSet::new(vec![0, 1, 2], 4).unwrap();
        let options = CompatibilityOptions { s_max: 2, ..Default::default() };
        let res = compatibility_constant_with(&x, &set, 1.0, &options).unwrap();
        assert!(res.fell_back);
        assert_eq!(res.method, CompatibilityMethod::ProjectedSearch);
        assert!((res.phi_sq - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = example(true);
        assert!(compatibility_constant(&x, &IndexSet::empty(), 3.0).is_err());
        let set = IndexSet::new(vec![0], 3).unwrap();
        assert!(compatibility_constant(&x, &set, 0.0).is_err());
    }
}
