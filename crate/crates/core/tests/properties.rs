use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use qlasso::calibration::{
    check_preconditions, oracle_bounds, tuning_levels, BoundKind, PreconditionInputs, TheoryConstants,
};
use qlasso::design::{
    compatibility_constant, compatibility_constant_with, irrepresentable_theta, restricted_eigenvalue,
    CompatibilityMethod, CompatibilityOptions, DesignMatrix, IndexSet, WeightedGram,
};
use qlasso::family::{make_family, BinaryLink, Family, FamilySpec, QuasiFamily, RobustLoss};
use qlasso::solver::{fit, kkt_residual, lambda_max, soft_threshold_fit, FitResult, PenalizedProblem, SolverConfig};

fn gaussian_design(seed: u64, n: usize, p: usize) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DesignMatrix::new(DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))).unwrap()
}

fn orthonormal_design(seed: u64, n: usize, p: usize) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::<f64>::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let q = a.qr().q();
    DesignMatrix::new(q * (n as f64).sqrt()).unwrap()
}

fn random_set(seed: u64, p: usize, s: usize) -> IndexSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut idx: Vec<usize> = (0..p).collect();
    for k in 0..s {
        let j = rng.random_range(k..p);
        idx.swap(k, j);
    }
    IndexSet::new(idx[..s].to_vec(), p).unwrap()
}

fn all_specs() -> Vec<FamilySpec> {
    vec![
        FamilySpec::Gaussian,
        FamilySpec::Logistic,
        FamilySpec::BinaryLink { link: BinaryLink::Probit },
        FamilySpec::BinaryLink { link: BinaryLink::Cloglog },
        FamilySpec::Quantile { alpha: 0.25 },
        FamilySpec::Lad,
        FamilySpec::Huber { k: 0.8 },
        FamilySpec::Huber { k: 2.0 },
    ]
}

fn is_binary(f: &Family) -> bool {
    matches!(f.name(), "logistic" | "probit" | "cloglog")
}

fn response_for(f: &Family, u: f64, v: f64) -> f64 {
    if is_binary(f) {
        if u < 0.5 {
            0.0
        } else {
            1.0
        }
    } else {
        4.0 * v
    }
}

fn response_vector(f: &Family, eta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    eta.iter()
        .map(|&z| {
            if is_binary(f) {
                if rng.random::<f64>() < 1.0 / (1.0 + (-z).exp()) {
                    1.0
                } else {
                    0.0
                }
            } else {
                z + rng.sample::<f64, _>(StandardNormal)
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn losses_are_convex(u in 0.0..1.0_f64, v in -1.0..1.0_f64, z in -8.0..8.0_f64) {
        let h = 1e-3;
        for spec in all_specs() {
            let f = make_family(&spec).unwrap();
            let y = response_for(&f, u, v);
            let d2 = f.loss(y, z + h).unwrap() - 2.0 * f.loss(y, z).unwrap() + f.loss(y, z - h).unwrap();
            prop_assert!(d2 >= -1e-9, "{}: second difference {d2:e} at y = {y}, z = {z}", f.name());
        }
    }

    #[test]
    fn derivatives_match_central_differences(u in 0.0..1.0_f64, v in -1.0..1.0_f64, z in -5.0..5.0_f64) {
        let h = 1e-6;
        for spec in all_specs() {
            let f = make_family(&spec).unwrap();
            if !f.is_smooth() {
                continue;
            }
            let y = response_for(&f, u, v);
            let fd = (f.loss(y, z + h).unwrap() - f.loss(y, z - h).unwrap()) / (2.0 * h);
            let d = f.loss_derivative(y, z).unwrap();
            prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "{}: {d} vs {fd} at y = {y}, z = {z}", f.name());
        }
    }

    #[test]
    fn robust_losses_are_one_lipschitz(u in 0.0..1.0_f64, v in -1.0..1.0_f64, z in -10.0..10.0_f64, w in -10.0..10.0_f64) {
        let losses = [
            RobustLoss::quantile(0.3).unwrap(),
            RobustLoss::quantile(0.9).unwrap(),
            RobustLoss::lad(),
            RobustLoss::logistic(),
            RobustLoss::huber(1.0).unwrap(),
            RobustLoss::huber(0.5).unwrap(),
        ];
        for r in losses {
            let y = if r.name() == "logistic" { if u < 0.5 { 0.0 } else { 1.0 } } else { 5.0 * v };
            let gap = (r.loss(y, z) - r.loss(y, w)).abs();
            let scale = 1.0 + r.loss(y, z).abs().max(r.loss(y, w).abs());
            prop_assert!(r.lipschitz_constant() <= 1.0);
            prop_assert!(gap <= (z - w).abs() + 4.0 * f64::EPSILON * scale, "{}: {gap} > |z - w| = {}", r.name(), (z - w).abs());
        }
    }

    #[test]
    fn canonical_links_have_identity_h(z in -30.0..30.0_f64) {
        for q in [QuasiFamily::gaussian(), QuasiFamily::logistic()] {
            let big_h = q.big_h(z).unwrap();
            prop_assert!((big_h - z).abs() <= 1e-12 * z.abs().max(1.0), "{}: H({z}) = {big_h}", q.name());
        }
    }

    #[test]
    fn regret_is_nonnegative_and_vanishes_on_the_diagonal(a in 0.001..0.999_f64, b in 0.001..0.999_f64, c in -20.0..20.0_f64) {
        for q in [QuasiFamily::gaussian(), QuasiFamily::logistic(), QuasiFamily::binary(BinaryLink::Probit)] {
            let (mu, mu0) = if q.name() == "gaussian" { (c, 10.0 * (b - 0.5)) } else { (a, b) };
            let r = q.regret(mu, mu0).unwrap();
            prop_assert!(r >= -1e-12, "{}: regret({mu}, {mu0}) = {r}", q.name());
            prop_assert!(q.regret(mu0, mu0).unwrap().abs() <= 1e-12);
            if (mu - mu0).abs() > 1e-3 {
                prop_assert!(r > 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn compatibility_shrinks_as_the_cone_grows(seed in any::<u64>(), s in 1usize..4) {
        let x = gaussian_design(seed, 6, 10);
        let set = random_set(seed, 10, s);
        let mut last = f64::INFINITY;
        for l in [0.5, 1.0, 2.0, 3.0, 5.0] {
            let phi = compatibility_constant(&x, &set, l).unwrap().phi_sq;
            prop_assert!(phi <= last + 1e-9, "phi^2 grew from {last} to {phi} at L = {l}");
            last = phi;
        }
    }

    #[test]
    fn compatibility_scales_quadratically_and_theta_is_scale_free(seed in any::<u64>(), s in 1usize..4, c in prop_oneof![-3.0..-0.3_f64, 0.3..3.0_f64]) {
        let x = gaussian_design(seed, 12, 8);
        let set = random_set(seed, 8, s);
        let cx = x.scaled(c).unwrap();
        let phi = compatibility_constant(&x, &set, 3.0).unwrap().phi_sq;
        let phi_c = compatibility_constant(&cx, &set, 3.0).unwrap().phi_sq;
        prop_assert!((phi_c - c * c * phi).abs() <= 1e-8 * (1.0 + c * c * phi));
        let theta = irrepresentable_theta(&WeightedGram::from_matrix(x.gram()).unwrap(), &set).unwrap().theta;
        let theta_c = irrepresentable_theta(&WeightedGram::from_matrix(cx.gram()).unwrap(), &set).unwrap().theta;
        prop_assert!((theta - theta_c).abs() <= 1e-9 * (1.0 + theta));
    }

    #[test]
    fn exact_enumeration_and_projected_search_agree(seed in any::<u64>(), s in 1usize..4) {
        let x = gaussian_design(seed, 6, 10);
        let set = random_set(seed, 10, s);
        let exact = compatibility_constant_with(&x, &set, 3.0, &CompatibilityOptions {
            method: Some(CompatibilityMethod::ExactQpEnumeration),
            ..CompatibilityOptions::default()
        }).unwrap();
        let search = compatibility_constant_with(&x, &set, 3.0, &CompatibilityOptions {
            method: Some(CompatibilityMethod::ProjectedSearch),
            ..CompatibilityOptions::default()
        }).unwrap();
        prop_assert_eq!(exact.method, CompatibilityMethod::ExactQpEnumeration);
        prop_assert!((exact.phi_sq - search.phi_sq).abs() <= 1e-5, "exact {} vs search {}", exact.phi_sq, search.phi_sq);
    }

    #[test]
    fn compatibility_dominates_restricted_eigenvalue(seed in any::<u64>(), s in 1usize..4, l in 1.0..4.0_f64) {
        let x = gaussian_design(seed, 10, 12);
        let set = random_set(seed, 12, s);
        let phi = compatibility_constant(&x, &set, l).unwrap().phi_sq;
        let re = restricted_eigenvalue(&x, &set, l).unwrap();
        prop_assert!(phi >= re - 1e-8, "phi^2 = {phi} < phi_RE^2 = {re}");
    }

    #[test]
    fn theta_matches_sign_vector_brute_force(seed in any::<u64>(), s in 1usize..7) {
        let x = gaussian_design(seed, 40, 10);
        let set = random_set(seed, 10, s);
        let gram = x.gram();
        let theta = irrepresentable_theta(&WeightedGram::from_matrix(gram.clone()).unwrap(), &set).unwrap().theta;
        let idx = set.indices();
        let comp = set.complement(10);
        let s11 = DMatrix::from_fn(s, s, |a, b| gram[(idx[a], idx[b])]);
        let inv = s11.try_inverse().unwrap();
        let mut best = 0.0_f64;
        for mask in 0..1u32 << s {
            let tau = nalgebra::DVector::from_fn(s, |k, _| if mask >> k & 1 == 1 { -1.0 } else { 1.0 });
            let v = &inv * tau;
            for j in comp.iter() {
                let val: f64 = idx.iter().enumerate().map(|(k, &i)| gram[(j, i)] * v[k]).sum();
                best = best.max(val.abs());
            }
        }
        prop_assert!((best - theta).abs() <= 1e-10 * (1.0 + theta));
    }
}

fn solve(x: &DesignMatrix, y: &[f64], f: &Family, lambda: f64, config: &SolverConfig) -> FitResult {
    fit(&PenalizedProblem::new(x, y, f, lambda).unwrap(), config).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fits_carry_an_independent_kkt_certificate(seed in any::<u64>(), fam in 0usize..4, frac in 0.05..0.8_f64) {
        let spec = [FamilySpec::Gaussian, FamilySpec::Logistic, FamilySpec::Lad, FamilySpec::Huber { k: 1.0 }][fam];
        let f = make_family(&spec).unwrap();
        let x = gaussian_design(seed, 40, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let eta = x.predict(&(0..60).map(|j| if j < 3 { 1.0 } else { 0.0 }).collect::<Vec<_>>()).unwrap();
        let y = response_vector(&f, eta.as_slice(), &mut rng);
        let lmax = lambda_max(&x, &y, &f).unwrap();
        prop_assume!(lmax > 1e-8);
        let config = SolverConfig::default();
        let problem = PenalizedProblem::new(&x, &y, &f, frac * lmax).unwrap();
        let result = fit(&problem, &config).unwrap();
        let report = kkt_residual(&problem, &result.beta).unwrap();
        prop_assert!(result.converged);
        prop_assert!(report.sup_violation <= config.kkt_tolerance, "sup violation {}", report.sup_violation);
        prop_assert!(report.sign_ok);
    }

    #[test]
    fn objective_descends_between_smoothing_restarts(seed in any::<u64>(), fam in 0usize..3) {
        let spec = [FamilySpec::Gaussian, FamilySpec::Logistic, FamilySpec::Quantile { alpha: 0.4 }][fam];
        let f = make_family(&spec).unwrap();
        let x = gaussian_design(seed, 30, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let eta = x.predict(&(0..20).map(|j| if j < 2 { 1.0 } else { 0.0 }).collect::<Vec<_>>()).unwrap();
        let y = response_vector(&f, eta.as_slice(), &mut rng);
        let lmax = lambda_max(&x, &y, &f).unwrap();
        prop_assume!(lmax > 1e-8);
        let config = SolverConfig { record_trace: true, ..SolverConfig::default() };
        let result = solve(&x, &y, &f, 0.3 * lmax, &config);
        let trace = &result.objective_trace;
        let mut starts = result.level_starts.clone();
        starts.push(trace.len());
        for w in starts.windows(2) {
            for k in w[0] + 1..w[1] {
                prop_assert!(trace[k] <= trace[k - 1] * (1.0 + 1e-12) + 1e-14, "objective rose at step {k}: {} -> {}", trace[k - 1], trace[k]);
            }
        }
    }

    #[test]
    fn l1_norm_decreases_along_the_lambda_grid(seed in any::<u64>()) {
        let f = make_family(&FamilySpec::Gaussian).unwrap();
        let x = gaussian_design(seed, 50, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        let eta = x.predict(&(0..30).map(|j| if j < 4 { 1.5 } else { 0.0 }).collect::<Vec<_>>()).unwrap();
        let y = response_vector(&f, eta.as_slice(), &mut rng);
        let lmax = lambda_max(&x, &y, &f).unwrap();
        let config = SolverConfig { kkt_tolerance: 1e-10, ..SolverConfig::default() };
        let mut last = 0.0;
        for frac in [1.0, 0.7, 0.5, 0.3, 0.2, 0.1, 0.05] {
            let norm: f64 = solve(&x, &y, &f, frac * lmax, &config).beta.iter().map(|b| b.abs()).sum();
            prop_assert!(norm >= last - 1e-7, "l1 norm fell from {last} to {norm} at {frac} lambda_max");
            last = norm;
        }
    }

    #[test]
    fn fits_are_permutation_equivariant(seed in any::<u64>()) {
        let f = make_family(&FamilySpec::Gaussian).unwrap();
        let x = gaussian_design(seed, 40, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
        let eta = x.predict(&(0..25).map(|j| if j % 7 == 0 { 1.0 } else { 0.0 }).collect::<Vec<_>>()).unwrap();
        let y = response_vector(&f, eta.as_slice(), &mut rng);
        let mut perm: Vec<usize> = (0..25).collect();
        for k in (1..25).rev() {
            perm.swap(k, rng.random_range(0..=k));
        }
        let xp = x.permuted_columns(&perm).unwrap();
        let config = SolverConfig { kkt_tolerance: 1e-10, ..SolverConfig::default() };
        let lambda = 0.2 * lambda_max(&x, &y, &f).unwrap();
        let b = solve(&x, &y, &f, lambda, &config).beta;
        let bp = solve(&xp, &y, &f, lambda, &config).beta;
        for (k, &j) in perm.iter().enumerate() {
            prop_assert!((bp[k] - b[j]).abs() <= 1e-7, "column {j}: {} vs {}", b[j], bp[k]);
        }
    }

    #[test]
    fn orthonormal_fits_are_soft_thresholds(seed in any::<u64>(), p in prop_oneof![Just(8usize), Just(16), Just(32)], frac in 0.05..1.2_f64) {
        let f = make_family(&FamilySpec::Gaussian).unwrap();
        let x = orthonormal_design(seed, 64, p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
        let eta = x.predict(&(0..p).map(|j| if j < 3 { 1.0 } else { 0.0 }).collect::<Vec<_>>()).unwrap();
        let y = response_vector(&f, eta.as_slice(), &mut rng);
        let lambda = frac * lambda_max(&x, &y, &f).unwrap();
        let closed = soft_threshold_fit(&x, &y, 2.0 * lambda).unwrap();
        let config = SolverConfig { kkt_tolerance: 1e-12, ..SolverConfig::default() };
        let b = solve(&x, &y, &f, lambda, &config).beta;
        let dev = b.iter().zip(&closed).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        prop_assert!(dev <= 1e-8, "max deviation {dev:e}");
    }
}

fn constants(sigma: f64, kappa: f64) -> TheoryConstants {
    TheoryConstants { sigma, kappa, k_x: 2.0, k_0: 1.5, c_h: 1.3, c_v: 3.0, l_h: 0.7, l_g: 0.4, c_l: Some(2.0) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tuning_levels_are_monotone(n in 10usize..100_000, p in 2.0..1e4_f64, t in 0.0..20.0_f64, dt in 0.01..5.0_f64) {
        let c = constants(0.8, 0.9);
        let base = tuning_levels(&c, n, p, t).unwrap();
        let more_t = tuning_levels(&c, n, p, t + dt).unwrap();
        let more_p = tuning_levels(&c, n, p * 1.5, t).unwrap();
        let more_n = tuning_levels(&c, 4 * n, p, t).unwrap();
        prop_assert!(more_t.lambda_eps > base.lambda_eps && more_t.lambda_0 > base.lambda_0);
        prop_assert!(more_p.lambda_eps > base.lambda_eps && more_p.lambda_0 > base.lambda_0);
        prop_assert!((more_n.lambda_eps - 0.5 * base.lambda_eps).abs() <= 1e-12 * base.lambda_eps);
        prop_assert!((more_n.lambda_0 - 0.5 * base.lambda_0).abs() <= 1e-12 * base.lambda_0);
        prop_assert!(more_t.alpha_oracle < base.alpha_oracle);
        prop_assert!(more_t.alpha_robust < base.alpha_robust);
        prop_assert!(more_t.alpha_select < base.alpha_select);
        let zero = tuning_levels(&constants(0.8, 0.0), n, p, t).unwrap();
        prop_assert!((zero.alpha_select - 3.0 * zero.alpha_oracle).abs() <= 1e-15 * zero.alpha_select);
    }

    #[test]
    fn derived_constants_match_their_primitives(c_h in 0.1..5.0_f64, c_v in 0.1..20.0_f64, l_h in 0.0..3.0_f64, l_g in 0.0..3.0_f64, k_x in 0.1..10.0_f64) {
        let c = TheoryConstants { sigma: 1.0, kappa: 1.0, k_x, k_0: 1.0, c_h, c_v, l_h, l_g, c_l: None };
        prop_assert_eq!(c.c_hv(), c_v * c_h * c_h);
        prop_assert_eq!(c.c_hx(), 16.0 * c_h * k_x);
        prop_assert_eq!(c.l_hv(), (l_g + l_h * c_v) * c_h);
        prop_assert_eq!(c.l_hx(), 16.0 * l_h * k_x * k_x);
    }

    #[test]
    fn least_squares_bound_is_linear_in_effective_sparsity(lambda in 1e-4..10.0_f64, gamma in 0.01..100.0_f64) {
        let c = TheoryConstants::gaussian(1.0, 1.0, 1.0, 1.0).unwrap();
        let full = oracle_bounds(BoundKind::Thm1, &c, lambda, gamma).unwrap();
        let half = oracle_bounds(BoundKind::Thm1, &c, lambda, gamma / 2.0).unwrap();
        let (a, b) = (full.combined_bound.unwrap(), half.combined_bound.unwrap());
        prop_assert!((b - a / 2.0).abs() <= 1e-15 * a);
    }

    #[test]
    fn precondition_checks_are_pure(n in 10usize..10_000, t in 0.0..10.0_f64, lambda in 1e-3..1.0_f64, gamma in 0.1..20.0_f64, theta in 0.0..1.0_f64) {
        let c = constants(0.5, 0.7);
        let inputs = PreconditionInputs { n, p: 50.0, t, lambda, gamma_eff: gamma, theta: Some(theta), lambda_x: Some(0.1) };
        let a = check_preconditions(&c, &inputs).unwrap();
        let b = check_preconditions(&c, &{ inputs }).unwrap();
        prop_assert_eq!(a, b);
    }
}
