//! Fixed designs and the design-dependent constants of the oracle theory.

mod compatibility;
mod gram;
pub mod qp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use compatibility::{
    compatibility_constant, compatibility_constant_with, effective_sparsity,
    restricted_eigenvalue, CompatibilityMethod, CompatibilityOptions, CompatibilityResult,
    DEFAULT_S_MAX,
};
pub use gram::{
    gram_sup_distance, irrepresentable_theta, weighted_gram, IrrepresentableResult, WeightedGram,
    MIN_RECIPROCAL_CONDITION,
};

/// An `n x p` design with cached column norms `||X_j||_n` and `K_X = max |x_ij|`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    column_norms: Vec<f64>,
    k_x: f64,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 1 {
            return Err(Error::InvalidParameter("design needs at least one row".into()));
        }
        if p < 2 {
            return Err(Error::InvalidParameter(format!("design needs p >= 2 columns, got {p}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("design has non-finite entries".into()));
        }
        let column_norms = x
            .column_iter()
            .map(|c| (c.norm_squared() / n as f64).sqrt())
            .collect();
        let k_x = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(DesignMatrix { x, column_norms, k_x })
    }

    /// Builds a design from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::ShapeMismatch("design rows have unequal lengths".into()));
        }
        DesignMatrix::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column_norms(&self) -> &[f64] {
        &self.column_norms
    }

    pub fn k_x(&self) -> f64 {
        self.k_x
    }

    /// `X^T X / n`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.x.tr_mul(&self.x) / self.n() as f64
    }

    /// The linear predictor `X beta`.
    pub fn predict(&self, beta: &[f64]) -> Result<DVector<f64>> {
        if beta.len() != self.p() {
            return Err(Error::ShapeMismatch(format!(
                "coefficient vector has length {}, design has {} columns",
                beta.len(),
                self.p()
            )));
        }
        Ok(&self.x * DVector::from_column_slice(beta))
    }

    /// `c X`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        DesignMatrix::new(&self.x * c)
    }

    /// Columns reordered so column `j` of the result is column `perm[j]` of `self`.
    pub fn permuted_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.p() {
            return Err(Error::ShapeMismatch("permutation length differs from p".into()));
        }
        DesignMatrix::new(DMatrix::from_fn(self.n(), self.p(), |i, j| self.x[(i, perm[j])]))
    }
}

/// A sorted set of column indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Sorts and deduplicates; every index must be `< p`.
    pub fn new(mut indices: Vec<usize>, p: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&j| j >= p) {
            return Err(Error::InvalidParameter(format!("index {bad} out of range for p = {p}")));
        }
        Ok(IndexSet(indices))
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    /// `{j : beta_j != 0}`.
    pub fn support(beta: &[f64]) -> Self {
        IndexSet(beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn complement(&self, p: usize) -> IndexSet {
        IndexSet((0..p).filter(|j| !self.contains(*j)).collect())
    }

    pub fn is_subset_of(&self, other: &IndexSet) -> bool {
        self.iter().all(|j| other.contains(j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_metadata() {
        let d = DesignMatrix::from_rows(&[vec![3.0, -4.0], vec![4.0, 0.5]]).unwrap();
        assert_eq!((d.n(), d.p()), (2, 2));
        assert_eq!(d.k_x(), 4.0);
        assert!((d.column_norms()[0] - (25.0f64 / 2.0).sqrt()).abs() < 1e-15);
        let g = d.gram();
        assert!((g[(0, 1)] - (-12.0 + 2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn design_invariants() {
        assert!(DesignMatrix::from_rows(&[vec![1.0]]).is_err());
        assert!(DesignMatrix::from_rows(&[vec![1.0, f64::NAN]]).is_err());
        assert!(DesignMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn index_sets() {
        let s = IndexSet::new(vec![4, 1, 4], 5).unwrap();
        assert_eq!(s.indices(), &[1, 4]);
        assert_eq!(s.complement(5).indices(), &[0, 2, 3]);
        assert!(IndexSet::new(vec![5], 5).is_err());
        assert_eq!(IndexSet::support(&[0.0, -1.0, 0.0, 2.0]).indices(), &[1, 3]);
        assert!(IndexSet::new(vec![1], 5).unwrap().is_subset_of(&s));
    }
}
