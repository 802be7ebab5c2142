//! Convex quadratic programs over a simplex times an l1-ball.
//!
//! Minimizes `x^T Q x + c^T x` where `x = (a, b)`, `a` ranges over the
//! probability simplex in `R^s` and `b` over the l1-ball of radius `L`. Every
//! sign pattern of the compatibility and restricted-eigenvalue problems
//! reduces to this form. The solver runs FISTA with function-value restarts
//! using exact projections, then polishes on the identified face by solving
//! its KKT system. The Frank-Wolfe gap of the returned point bounds its
//! suboptimality and serves as the certificate.

use nalgebra::{DMatrix, DVector};

const CHECK_EVERY: usize = 25;

/// Tolerances for [`SimplexBallQp::solve`].
#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    /// Target Frank-Wolfe gap relative to `lipschitz * (1 + L)^2`.
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { gap_tol: 1e-12, max_iter: 200_000 }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Frank-Wolfe gap at `x`; an upper bound on `objective - optimum`.
    pub gap: f64,
    pub iterations: usize,
    pub polished: bool,
}

pub struct SimplexBallQp<'a> {
    q: &'a DMatrix<f64>,
    c: DVector<f64>,
    s: usize,
    radius: f64,
    lipschitz: f64,
}

impl<'a> SimplexBallQp<'a> {
    /// `lipschitz` must bound the largest eigenvalue of `2 Q`.
    pub fn new(q: &'a DMatrix<f64>, c: DVector<f64>, s: usize, radius: f64, lipschitz: f64) -> Self {
        debug_assert!(s >= 1 && s <= q.nrows());
        debug_assert_eq!(c.len(), q.nrows());
        SimplexBallQp { q, c, s, radius, lipschitz }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(self.q * x)) + self.c.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        2.0 * (self.q * x) + &self.c
    }

    /// Frank-Wolfe gap `max_{d feasible} grad^T (x - d)`.
    pub fn frank_wolfe_gap(&self, x: &DVector<f64>) -> f64 {
        let g = self.gradient(x);
        let s = self.s;
        let min_a = g.rows(0, s).min();
        let max_b = g.rows(s, g.len() - s).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (g.dot(x) - min_a + self.radius * max_b).max(0.0)
    }

    fn project(&self, x: &mut DVector<f64>) {
        let s = self.s;
        let m = x.len();
        project_simplex(x.rows_mut(0, s).as_mut_slice());
        project_l1_ball(x.rows_mut(s, m - s).as_mut_slice(), self.radius);
    }

    /// A feasible starting point: uniform weights on the simplex, zero elsewhere.
    pub fn default_start(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.q.nrows());
        for j in 0..self.s {
            x[j] = 1.0 / self.s as f64;
        }
        x
    }

    pub fn solve(&self, start: Option<&DVector<f64>>, options: &QpOptions) -> QpSolution {
        let mut x = match start {
            Some(x0) => {
                let mut x = x0.clone();
                self.project(&mut x);
                x
            }
            None => self.default_start(),
        };
        let scale = self.lipschitz.max(f64::MIN_POSITIVE) * (1.0 + self.radius).powi(2);
        let tol = options.gap_tol * scale;
        let step = if self.lipschitz > 0.0 { 1.0 / self.lipschitz } else { 1.0 };

        let mut fx = self.objective(&x);
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut iterations = 0;
        let mut gap;
        let mut polished = false;
        loop {
            if iterations % CHECK_EVERY == 0 {
                gap = self.frank_wolfe_gap(&x);
                if gap <= tol {
                    break;
                }
                if iterations > 0 {
                    if let Some((c, fc, gc)) = self.try_polish(&x, fx) {
                        if gc <= tol {
                            x = c;
                            fx = fc;
                            polished = true;
                            break;
                        }
                    }
                }
            }
            if iterations >= options.max_iter {
                break;
            }
            iterations += 1;
            let mut next = &y - step * self.gradient(&y);
            self.project(&mut next);
            let f_next = self.objective(&next);
            if f_next > fx {
                // restart momentum from the last accepted point
                t = 1.0;
                y.copy_from(&x);
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + ((t - 1.0) / t_next) * (&next - &x);
            x = next;
            fx = f_next;
            t = t_next;
        }
        gap = self.frank_wolfe_gap(&x);
        if !polished {
            if let Some((c, fc, gc)) = self.try_polish(&x, fx) {
                if gc <= gap {
                    x = c;
                    fx = fc;
                    gap = gc;
                    polished = true;
                }
            }
        }
        QpSolution { x, objective: fx, gap, iterations, polished }
    }

    fn try_polish(&self, x: &DVector<f64>, fx: f64) -> Option<(DVector<f64>, f64, f64)> {
        let candidate = self.polish(x)?;
        let fc = self.objective(&candidate);
        if fc > fx + 1e-14 * fx.abs().max(1.0) {
            return None;
        }
        let gc = self.frank_wolfe_gap(&candidate);
        Some((candidate, fc, gc))
    }

    /// Solves the equality-constrained QP on the face that contains `x`.
    fn polish(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let s = self.s;
        let m = x.len();
        let a_face: Vec<usize> = (0..s).filter(|&j| x[j] > 0.0).collect();
        let b_face: Vec<usize> = (s..m).filter(|&j| x[j] != 0.0).collect();
        let b_norm: f64 = (s..m).map(|j| x[j].abs()).sum();
        let ball_active = !b_face.is_empty() && b_norm >= self.radius * (1.0 - 1e-9);
        let face: Vec<usize> = a_face.iter().chain(&b_face).copied().collect();
        let k = face.len();
        let rows = k + 1 + usize::from(ball_active);
        let mut kkt = DMatrix::zeros(rows, rows);
        let mut rhs = DVector::zeros(rows);
        for (r, &i) in face.iter().enumerate() {
            for (c, &j) in face.iter().enumerate() {
                kkt[(r, c)] = 2.0 * self.q[(i, j)];
            }
            rhs[r] = -self.c[i];
        }
        for r in 0..a_face.len() {
            kkt[(k, r)] = 1.0;
            kkt[(r, k)] = 1.0;
        }
        rhs[k] = 1.0;
        if ball_active {
            for (offset, &j) in b_face.iter().enumerate() {
                let r = a_face.len() + offset;
                let sign = x[j].signum();
                kkt[(k + 1, r)] = sign;
                kkt[(r, k + 1)] = sign;
            }
            rhs[k + 1] = self.radius;
        }
        let svd = kkt.clone().svd(true, true);
        let sol = svd.solve(&rhs, 1e-13 * svd.singular_values.max()).ok()?;
        let residual = (&kkt * &sol - &rhs).amax();
        if !residual.is_finite() || residual > 1e-9 * (1.0 + rhs.amax()) {
            return None;
        }
        let mut candidate = DVector::zeros(m);
        for (r, &j) in face.iter().enumerate() {
            candidate[j] = sol[r];
        }
        // reject points that leave the face
        for &j in &a_face {
            if candidate[j] < -1e-14 {
                return None;
            }
            candidate[j] = candidate[j].max(0.0);
        }
        for &j in &b_face {
            if candidate[j] * x[j] < 0.0 {
                return None;
            }
        }
        let a_sum: f64 = (0..s).map(|j| candidate[j]).sum();
        if (a_sum - 1.0).abs() > 1e-12 {
            return None;
        }
        let b_sum: f64 = (s..m).map(|j| candidate[j].abs()).sum();
        if b_sum > self.radius * (1.0 + 1e-12) {
            return None;
        }
        Some(candidate)
    }
}

/// Euclidean projection onto `{a >= 0, sum a = 1}`.
pub fn project_simplex(v: &mut [f64]) {
    project_simplex_sum(v, 1.0);
}

fn project_simplex_sum(v: &mut [f64], total: f64) {
    if v.is_empty() {
        return;
    }
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - total) / (i + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Euclidean projection onto `{b : ||b||_1 <= radius}`.
pub fn project_l1_ball(v: &mut [f64], radius: f64) {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= radius {
        return;
    }
    if radius <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut magnitudes: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    project_simplex_sum(&mut magnitudes, radius);
    for (x, m) in v.iter_mut().zip(magnitudes) {
        *x = x.signum() * m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simplex_projection_examples() {
        let mut v = [0.5, 0.5];
        project_simplex(&mut v);
        assert_eq!(v, [0.5, 0.5]);
        let mut v = [2.0, 0.0, -1.0];
        project_simplex(&mut v);
        assert_eq!(v, [1.0, 0.0, 0.0]);
        let mut v = [0.0, 0.0];
        project_simplex(&mut v);
        assert_eq!(v, [0.5, 0.5]);
    }

    #[test]
    fn l1_projection_inside_is_identity() {
        let mut v = [0.3, -0.2];
        project_l1_ball(&mut v, 1.0);
        assert_eq!(v, [0.3, -0.2]);
        let mut v = [3.0, -1.0];
        project_l1_ball(&mut v, 1.0);
        assert_eq!(v, [1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn projections_are_feasible_and_idempotent(
            v in proptest::collection::vec(-5.0..5.0f64, 1..8),
            r in 0.1..4.0f64,
        ) {
            let mut a = v.clone();
            project_simplex(&mut a);
            prop_assert!(a.iter().all(|x| *x >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut again = a.clone();
            project_simplex(&mut again);
            for (x, y) in a.iter().zip(&again) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let mut b = v.clone();
            project_l1_ball(&mut b, r);
            prop_assert!(b.iter().map(|x| x.abs()).sum::<f64>() <= r * (1.0 + 1e-12));
        }
    }

    #[test]
    fn small_qp_against_grid() {
        // s = 1, two free coordinates: min (x3 + b1 u + b2 v)^2 style problem
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 1.0, 0.1, -0.2, 0.1, 0.5]);
        let lip = 2.0 * q.clone().symmetric_eigen().eigenvalues.max();
        let qp = SimplexBallQp::new(&q, DVector::zeros(3), 1, 0.7, lip);
        let sol = qp.solve(None, &QpOptions::default());
        let mut best = f64::INFINITY;
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let u = -0.7 + 1.4 * i as f64 / steps as f64;
                let v = -0.7 + 1.4 * j as f64 / steps as f64;
                if u.abs() + v.abs() <= 0.7 {
                    let x = DVector::from_vec(vec![1.0, u, v]);
                    best = best.min(qp.objective(&x));
                }
            }
        }
        assert!(sol.objective <= best + 1e-12);
        assert!(best - sol.objective < 1e-4);
        assert!(sol.gap < 1e-10);
    }
}
