//! Weighted Gram matrices, the irrepresentable constant and `lambda_X`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DesignMatrix, IndexSet};
use crate::error::{Error, Result};
use crate::family::QuasiFamily;

/// `Sigma_11` is refused below this reciprocal condition number.
pub const MIN_RECIPROCAL_CONDITION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGram {
    pub sigma: DMatrix<f64>,
    /// `w_i^2 = h^2(x_i^T beta0) V(G(x_i^T beta0))`.
    pub weights: Vec<f64>,
}

impl WeightedGram {
    /// Wraps a given symmetric matrix (unit weights are not recorded).
    pub fn from_matrix(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "Gram matrix must be square, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        Ok(WeightedGram { sigma, weights: Vec::new() })
    }
}

/// `Sigma = X^T W^2 X / n` with the curvature weights of `family` at `beta0`.
pub fn weighted_gram(design: &DesignMatrix, beta0: &[f64], family: &QuasiFamily) -> Result<WeightedGram> {
    let eta = design.predict(beta0)?;
    let weights = eta
        .iter()
        .map(|&z| {
            let h = family.h(z)?;
            Ok(h * h * family.variance_at(z))
        })
        .collect::<Result<Vec<f64>>>()?;
    let x = design.matrix();
    let n = design.n() as f64;
    let w = DVector::from_column_slice(&weights);
    let weighted = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| w[i] * x[(i, j)]);
    let mut sigma = x.transpose() * weighted / n;
    // exact symmetry
    for i in 0..sigma.nrows() {
        for j in 0..i {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(WeightedGram { sigma, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrrepresentableResult {
    pub theta: f64,
    pub reciprocal_condition: f64,
    pub min_eigenvalue: f64,
}

/// `theta = max_j sum_k |(Sigma_21 Sigma_11^{-1})_{jk}|`, the l_inf operator
/// norm of `Sigma_21 Sigma_11^{-1}`.
pub fn irrepresentable_theta(gram: &WeightedGram, set: &IndexSet) -> Result<IrrepresentableResult> {
    let sigma = &gram.sigma;
    let p = sigma.nrows();
    if set.indices().iter().any(|&j| j >= p) {
        return Err(Error::InvalidParameter(format!("S has an index beyond p = {p}")));
    }
    let complement = set.complement(p);
    if set.is_empty() || complement.is_empty() {
        return Ok(IrrepresentableResult { theta: 0.0, reciprocal_condition: 1.0, min_eigenvalue: f64::NAN });
    }
    let s_idx = set.indices();
    let c_idx = complement.indices();
    let s11 = DMatrix::from_fn(s_idx.len(), s_idx.len(), |a, b| sigma[(s_idx[a], s_idx[b])]);
    let s21 = DMatrix::from_fn(c_idx.len(), s_idx.len(), |a, b| sigma[(c_idx[a], s_idx[b])]);
    let eigen = s11.clone().symmetric_eigen().eigenvalues;
    let min_eigenvalue = eigen.min();
    let max_abs = eigen.amax();
    let reciprocal_condition = if max_abs > 0.0 { min_eigenvalue.max(0.0) / max_abs } else { 0.0 };
    if reciprocal_condition < MIN_RECIPROCAL_CONDITION {
        return Err(Error::SingularGram { min_eigenvalue, rcond: reciprocal_condition });
    }
    let chol = s11
        .cholesky()
        .ok_or(Error::SingularGram { min_eigenvalue, rcond: reciprocal_condition })?;
    // Sigma_21 Sigma_11^{-1} = (Sigma_11^{-1} Sigma_12)^T
    let a = chol.solve(&s21.transpose()).transpose();
    let theta = a
        .row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(IrrepresentableResult { theta, reciprocal_condition, min_eigenvalue })
}

/// `lambda_X = max_{j,k} |SigmaHat_jk - Sigma_jk|`.
pub fn gram_sup_distance(sigma_hat: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if sigma_hat.shape() != sigma.shape() {
        return Err(Error::ShapeMismatch(format!(
            "Gram shapes differ: {:?} vs {:?}",
            sigma_hat.shape(),
            sigma.shape()
        )));
    }
    Ok((sigma_hat - sigma).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example() -> DesignMatrix {
        let r = 2.0_f64.sqrt();
        DesignMatrix::from_rows(&[vec![r * 5.0 / 13.0, 0.0, r], vec![r * 12.0 / 13.0, r, 0.0]]).unwrap()
    }

    fn brute_force(gram: &WeightedGram, set: &IndexSet) -> f64 {
        let p = gram.sigma.nrows();
        let s_idx = set.indices();
        let c_idx = set.complement(p);
        let s11 = DMatrix::from_fn(s_idx.len(), s_idx.len(), |a, b| gram.sigma[(s_idx[a], s_idx[b])]);
        let inv = s11.try_inverse().unwrap();
        let mut best = 0.0_f64;
        for mask in 0..1_u32 << s_idx.len() {
            let tau = DVector::from_fn(s_idx.len(), |k, _| if mask >> k & 1 == 1 { -1.0 } else { 1.0 });
            let v = &inv * tau;
            for j in c_idx.iter() {
                let val: f64 = s_idx.iter().enumerate().map(|(k, &i)| gram.sigma[(j, i)] * v[k]).sum();
                best = best.max(val.abs());
            }
        }
        best
    }

    #[test]
    fn worked_example_theta() {
        let gram = weighted_gram(&example(), &[0.0; 3], &QuasiFamily::gaussian()).unwrap();
        let set = IndexSet::new(vec![2], 3).unwrap();
        let res = irrepresentable_theta(&gram, &set).unwrap();
        assert!((res.theta - 5.0 / 13.0).abs() < 1e-12);
        assert!((brute_force(&gram, &set) - res.theta).abs() < 1e-12);
    }

    #[test]
    fn weights_for_builtin_families() {
        let x = example();
        let g = weighted_gram(&x, &[0.3, -1.0, 2.0], &QuasiFamily::gaussian()).unwrap();
        assert!(g.weights.iter().all(|&w| w == 1.0));
        assert!((&g.sigma - x.gram()).amax() < 1e-15);
        let l = weighted_gram(&x, &[0.0; 3], &QuasiFamily::logistic()).unwrap();
        assert!(l.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        let far = weighted_gram(&x, &[0.0, 0.0, 500.0], &QuasiFamily::logistic()).unwrap();
        assert!(far.weights[0] < 1e-100);
    }

    #[test]
    fn theta_matches_brute_force_and_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DesignMatrix::new(DMatrix::from_fn(40, 8, |_, _| rng.random::<f64>() - 0.5)).unwrap();
        let gram = WeightedGram::from_matrix(x.gram()).unwrap();
        let set = IndexSet::new(vec![0, 3, 5], 8).unwrap();
        let theta = irrepresentable_theta(&gram, &set).unwrap().theta;
        assert!((theta - brute_force(&gram, &set)).abs() < 1e-10);
        let full = IndexSet::new((0..8).collect(), 8).unwrap();
        assert_eq!(irrepresentable_theta(&gram, &full).unwrap().theta, 0.0);
        let scaled = WeightedGram::from_matrix(x.scaled(-3.0).unwrap().gram()).unwrap();
        let theta_scaled = irrepresentable_theta(&scaled, &set).unwrap().theta;
        assert!((theta - theta_scaled).abs() < 1e-10);
    }

    #[test]
    fn singular_block_is_refused() {
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let gram = WeightedGram::from_matrix(sigma).unwrap();
        let set = IndexSet::new(vec![0, 1], 3).unwrap();
        assert!(matches!(irrepresentable_theta(&gram, &set), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn sup_distance() {
        let a = DMatrix::<f64>::identity(3, 3);
        assert_eq!(gram_sup_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(gram_sup_distance(&a, &DMatrix::zeros(3, 3)).unwrap(), 1.0);
        assert!(gram_sup_distance(&a, &DMatrix::zeros(2, 3)).is_err());
    }
}
