//! Randomized invariants of the solvers, the metric and the experiment harnesses.

mod common;

use ::rpw::experiments::{convergence_experiment, ConvergenceConfig, SyntheticSampler};
use ::rpw::retrieval::{perturb, rank, retrieve, standard_metrics, synthetic_blob_corpus, Scenario};
use ::rpw::rpw::{levy_prokhorov_scan, pairwise};
use ::rpw::{
    bottleneck_profile, levy_prokhorov, ot_profile, partial_ot, rpw, rpw_approx, rpw_binary_search, tv,
    wasserstein, DiscreteDistribution, Exponent, Metric,
};
use common::{random_dist, random_dist_between, rng, unit_cube_costs};
use proptest::prelude::*;
use rand::Rng;

const EXPONENTS: [f64; 3] = [1.0, 2.0, 3.0];

fn exponent(i: usize) -> Exponent {
    Exponent::Finite(EXPONENTS[i % EXPONENTS.len()])
}

fn pair(seed: u64, lattice: Option<u32>) -> (DiscreteDistribution, DiscreteDistribution) {
    let mut r = rng(seed);
    let mu = random_dist_between(&mut r, 1, 8, 2, lattice);
    let nu = random_dist_between(&mut r, 1, 8, 2, lattice);
    (mu, nu)
}

fn eps(mu: &DiscreteDistribution, nu: &DiscreteDistribution, p: Exponent, k: f64) -> f64 {
    rpw(mu, nu, &unit_cube_costs(mu, nu), p, k).unwrap().epsilon
}

/// Same masses and rebuilt support `x -> scale * x`, so both copies round identically.
fn rescaled(dists: &[DiscreteDistribution], scale: f64) -> Vec<DiscreteDistribution> {
    dists
        .iter()
        .map(|d| {
            let pts: Vec<Vec<f64>> = d.points().map(|x| x.iter().map(|c| c * scale).collect()).collect();
            DiscreteDistribution::from_points(&pts, d.masses()).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_plans_are_feasible_and_match_profile(seed in any::<u64>(), pi in 0usize..3, alpha in 0.0f64..=1.0) {
        let (mu, nu) = pair(seed, Some(3));
        let p = exponent(pi);
        let cm = unit_cube_costs(&mu, &nu);
        let plan = partial_ot(&mu, &nu, &cm, alpha, p).unwrap();
        plan.check_marginals(&mu, &nu).unwrap();
        prop_assert!((plan.transported_mass - alpha).abs() < 1e-9);
        let profile = ot_profile(&mu, &nu, &cm, p).unwrap();
        prop_assert!((profile.cost_at(alpha) - plan.p_cost).abs() < 1e-9);
    }

    #[test]
    fn partial_cost_is_symmetric(seed in any::<u64>(), pi in 0usize..3, alpha in 0.0f64..=1.0) {
        let (mu, nu) = pair(seed, None);
        let p = exponent(pi);
        let forward = partial_ot(&mu, &nu, &unit_cube_costs(&mu, &nu), alpha, p).unwrap();
        let backward = partial_ot(&nu, &mu, &unit_cube_costs(&nu, &mu), alpha, p).unwrap();
        prop_assert!((forward.p_cost - backward.p_cost).abs() < 1e-9);
    }

    #[test]
    fn profile_is_convex_and_monotone(seed in any::<u64>(), pi in 0usize..3) {
        let (mu, nu) = pair(seed, Some(4));
        let profile = ot_profile(&mu, &nu, &unit_cube_costs(&mu, &nu), exponent(pi)).unwrap();
        prop_assert!((profile.max_mass() - 1.0).abs() < 1e-9);
        let slopes = profile.slopes();
        for w in slopes.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9);
        }
        let grid: Vec<f64> = (0..=20).map(|i| profile.w_at(i as f64 / 20.0)).collect();
        for w in grid.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn disc_flow_is_monotone(seed in any::<u64>()) {
        let (mu, nu) = pair(seed, Some(3));
        let bp = bottleneck_profile(&mu, &nu, &unit_cube_costs(&mu, &nu)).unwrap();
        let grid: Vec<f64> = (0..=40).map(|i| bp.flow_at(i as f64 / 40.0)).collect();
        for w in grid.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
        prop_assert!((bp.flow_at(1.0) - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn metric_axioms(seed in any::<u64>(), pi in 0usize..4, k in prop::sample::select(vec![0.0, 0.5, 1.0, 4.0])) {
        let mut r = rng(seed);
        let lattice = if r.gen_bool(0.5) { Some(2) } else { None };
        let mu = random_dist_between(&mut r, 1, 12, 2, lattice);
        let nu = random_dist_between(&mut r, 1, 12, 2, lattice);
        let kappa = random_dist_between(&mut r, 1, 12, 2, lattice);
        let p = if pi == 3 { Exponent::Infinite } else { exponent(pi) };
        prop_assert_eq!(eps(&mu, &mu, p, k), 0.0);
        let d_mn = eps(&mu, &nu, p, k);
        prop_assert!((d_mn - eps(&nu, &mu, p, k)).abs() <= 1e-9);
        if tv(&mu, &nu) > 1e-9 {
            prop_assert!(d_mn > 0.0);
        }
        let via = eps(&mu, &kappa, p, k) + eps(&kappa, &nu, p, k);
        prop_assert!(d_mn <= via + 1e-7, "{d_mn} > {via}");
    }

    #[test]
    fn crossing_is_bracketed_by_any_profile_point(seed in any::<u64>(), pi in 0usize..3, k in 0.05f64..20.0, alpha in 0.0f64..=1.0) {
        let (mu, nu) = pair(seed, Some(3));
        let p = exponent(pi);
        let cm = unit_cube_costs(&mu, &nu);
        let beta = partial_ot(&mu, &nu, &cm, 1.0 - alpha, p).unwrap().w_p() / k;
        let e = rpw(&mu, &nu, &cm, p, k).unwrap().epsilon;
        prop_assert!(e >= alpha.min(beta) - 1e-9, "{e} < min({alpha}, {beta})");
        prop_assert!(e <= alpha.max(beta) + 1e-9, "{e} > max({alpha}, {beta})");
    }

    #[test]
    fn nonincreasing_in_k(seed in any::<u64>(), pi in 0usize..4) {
        let (mu, nu) = pair(seed, Some(3));
        let p = if pi == 3 { Exponent::Infinite } else { exponent(pi) };
        let values: Vec<f64> = [0.0, 0.1, 0.5, 1.0, 3.0, 10.0, 100.0].iter().map(|&k| eps(&mu, &nu, p, k)).collect();
        for w in values.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{values:?}");
        }
    }

    #[test]
    fn outlier_sandwich(seed in any::<u64>(), pi in 0usize..3, k in 0.0f64..5.0, delta in 0.001f64..0.999) {
        let mut r = rng(seed);
        let mu = random_dist_between(&mut r, 1, 6, 2, None);
        let nu = random_dist_between(&mut r, 1, 6, 2, None);
        let outlier = random_dist_between(&mut r, 1, 4, 2, None);
        let noisy = nu.mixture(&outlier, delta).unwrap();
        let p = exponent(pi);
        let clean = eps(&mu, &nu, p, k);
        let dirty = eps(&mu, &noisy, p, k);
        prop_assert!(dirty >= clean - delta - 1e-9);
        prop_assert!(dirty <= (1.0 - delta) * clean + delta + 1e-9);
    }

    #[test]
    fn k_zero_is_total_variation(seed in any::<u64>(), pi in 0usize..4) {
        let (mu, nu) = pair(seed, Some(2));
        let p = if pi == 3 { Exponent::Infinite } else { exponent(pi) };
        prop_assert!((eps(&mu, &nu, p, 0.0) - tv(&mu, &nu)).abs() <= 1e-9);
    }

    #[test]
    fn levy_prokhorov_routes_agree(seed in any::<u64>()) {
        let (mu, nu) = pair(seed, Some(3));
        let cm = unit_cube_costs(&mu, &nu);
        let a = levy_prokhorov(&mu, &nu, &cm).unwrap();
        let b = levy_prokhorov_scan(&mu, &nu, &cm).unwrap();
        let c = rpw(&mu, &nu, &cm, Exponent::Infinite, 1.0).unwrap().epsilon;
        prop_assert!((a - b).abs() <= 1e-9 && (a - c).abs() <= 1e-9);
    }

    #[test]
    fn wasserstein_sandwich(seed in any::<u64>(), pi in 0usize..3, k in prop::sample::select(vec![0.5, 1.0, 2.0, 10.0, 1000.0])) {
        let (mu, nu) = pair(seed, None);
        let p = exponent(pi);
        let cm = unit_cube_costs(&mu, &nu);
        let e = rpw(&mu, &nu, &cm, p, k).unwrap().epsilon;
        let w = wasserstein(&mu, &nu, &cm, p).unwrap() / k;
        let slack = k.powf(-(p.value() + 1.0) / p.value());
        prop_assert!(e <= w + 1e-9, "{e} > {w}");
        prop_assert!(w <= e + slack + 1e-9, "{w} > {e} + {slack}");
    }

    #[test]
    fn approximations_stay_within_delta(seed in any::<u64>(), pi in 0usize..3, k in 0.2f64..10.0, delta in prop::sample::select(vec![0.2, 0.05, 0.01, 1e-3])) {
        let (mu, nu) = pair(seed, None);
        let p = exponent(pi);
        let cm = unit_cube_costs(&mu, &nu);
        let exact = rpw(&mu, &nu, &cm, p, k).unwrap().epsilon;
        let approx = rpw_approx(&mu, &nu, &cm, p, k, delta).unwrap().epsilon;
        prop_assert!(approx >= exact - 1e-12 && approx <= exact + delta + 1e-12, "{exact} vs {approx}");
        let guess = rpw_binary_search(&mu, &nu, &cm, p, k, delta.min(0.5)).unwrap().epsilon;
        prop_assert!((guess - exact).abs() <= delta + 1e-12, "{exact} vs {guess}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rankings_ignore_ground_scale(seed in any::<u64>(), shift in 0i32..6) {
        let mut r = rng(seed);
        let dists: Vec<DiscreteDistribution> = (0..5).map(|_| random_dist(&mut r, 6, 2, Some(5))).collect();
        let scale = 2f64.powi(shift - 2);
        let (dists, scaled) = (rescaled(&dists, 1.0), rescaled(&dists, scale));
        let ids: Vec<String> = (0..dists.len()).map(|i| format!("{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        for metric in standard_metrics() {
            let base = pairwise(&dists, 2f64.sqrt(), metric, 1).unwrap();
            let other = pairwise(&scaled, 2f64.sqrt() * scale, metric, 2).unwrap();
            for (a, b) in base.iter().zip(&other) {
                prop_assert_eq!(rank(a, &ids), rank(b, &ids));
            }
        }
    }

    #[test]
    fn values_ignore_ground_scale(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let dists: Vec<DiscreteDistribution> = (0..4).map(|_| random_dist(&mut r, 5, 2, None)).collect();
        let (dists, scaled) = (rescaled(&dists, 1.0), rescaled(&dists, scale));
        let metric = Metric::Rpw { p: Exponent::Finite(2.0), k: 1.0 };
        let base = pairwise(&dists, 2f64.sqrt(), metric, 1).unwrap();
        let other = pairwise(&scaled, 2f64.sqrt() * scale, metric, 1).unwrap();
        for (a, b) in base.iter().flatten().zip(other.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn convergence_reports_are_deterministic_across_widths() {
    let base = ConvergenceConfig {
        repetitions: 3,
        ..ConvergenceConfig::standard(vec![10, 40, 120], 11)
    };
    for sampler in [SyntheticSampler::two_point(), SyntheticSampler::grid4x4()] {
        let one = convergence_experiment(&sampler, &base).unwrap();
        let wide = convergence_experiment(&sampler, &ConvergenceConfig { jobs: 4, ..base.clone() }).unwrap();
        assert_eq!(one, wide);
        assert_eq!(one.to_csv().unwrap(), wide.to_csv().unwrap());
    }
}

#[test]
fn convergence_means_shrink_with_n() {
    let p = Exponent::Finite(2.0);
    for seed in [0, 1, 2] {
        let config = ConvergenceConfig {
            n_list: vec![10, 100, 1000],
            metrics: vec![Metric::Wasserstein { p }, Metric::TotalVariation, Metric::Rpw { p, k: 1.0 }],
            seed,
            repetitions: 10,
            jobs: 2,
        };
        for sampler in [SyntheticSampler::two_point(), SyntheticSampler::grid4x4()] {
            let report = convergence_experiment(&sampler, &config).unwrap();
            for metric in &config.metrics {
                let rows = report.summary(&metric.to_string());
                for w in rows.windows(2) {
                    let ((_, m0, s0), (n1, m1, s1)) = (w[0], w[1]);
                    let band = 2.0 * (s0 * s0 + s1 * s1).sqrt();
                    assert!(m1 <= m0 + band, "{} {metric} n={n1}: {m1} > {m0} + {band}", sampler.name());
                }
            }
        }
    }
}

#[test]
fn retrieval_is_deterministic_across_widths() {
    let corpus = synthetic_blob_corpus(24, 6, 10, 5).unwrap();
    let noisy = perturb(&corpus, Scenario::NoiseAndShift, 9).unwrap();
    assert_eq!(noisy, perturb(&corpus, Scenario::NoiseAndShift, 9).unwrap());
    let metrics = standard_metrics();
    let one = retrieve(&noisy, &metrics, 10, Scenario::NoiseAndShift, 1).unwrap();
    let wide = retrieve(&noisy, &metrics, 10, Scenario::NoiseAndShift, 3).unwrap();
    assert_eq!(one, wide);
    for row in &one.rows {
        assert!((0.0..=1.0).contains(&row.accuracy));
    }
}
