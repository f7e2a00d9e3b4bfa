//! The `(p,k)`-RPW metric and the distances it interpolates between.
//!
//! `RPW_{p,k}(mu, nu) = inf { eps >= 0 : W_{p,1-eps}(mu, nu) <= k * eps }`, i.e. one minus
//! the mass coordinate where the OT-profile meets the line `y = k (1 - x)`. With
//! `k = 0` it is the total variation distance, with `p = inf, k = 1` the
//! Lévy-Prokhorov distance, and for large `k` it approaches `W_p / k`.
//!
//! Every function here expects ground costs that live in a unit-diameter space
//! (see [`CostMatrix::normalize`] and [`CostMatrix::normalize_by`]).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{cost_matrix, location_key, CostMatrix, DiscreteDistribution, Exponent};
use crate::exact_ot::{bottleneck_profile, crossing, max_flow_disc, partial_ot, ProfileBuilder};
use crate::{Error, Result, MASS_TOLERANCE};

/// Slopes at or below this count as zero-cost transport.
const ZERO_SLOPE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ProfileIntersection,
    BinarySearch,
    ApproxProfile,
}

/// Value of the metric together with the crossing point `(x*, y*) = (1 - eps, k * eps)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RpwResult {
    pub epsilon: f64,
    pub x_star: f64,
    pub y_star: f64,
    pub p: Exponent,
    pub k: f64,
    pub method: Method,
}

impl RpwResult {
    fn new(epsilon: f64, p: Exponent, k: f64, method: Method) -> Self {
        let epsilon = epsilon.clamp(0.0, 1.0);
        Self {
            epsilon,
            x_star: 1.0 - epsilon,
            y_star: k * epsilon,
            p,
            k,
            method,
        }
    }
}

fn check_k(k: f64) -> Result<()> {
    if k.is_finite() && k >= 0.0 {
        Ok(())
    } else {
        Err(Error::param("k", format!("must be finite and non-negative, got {k}")))
    }
}

fn check_inputs(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cm: &CostMatrix) -> Result<()> {
    cm.check_shape(mu, nu)?;
    cm.require_unit()
}

/// Exact `(p,k)`-RPW.
///
/// For finite `p` the OT-profile is built one augmentation at a time and construction
/// stops as soon as the crossing is known to lie inside the computed prefix. For
/// `p = inf` the bottleneck step function is used.
pub fn rpw(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    p: Exponent,
    k: f64,
) -> Result<RpwResult> {
    check_k(k)?;
    check_inputs(mu, nu, cm)?;
    let method = Method::ProfileIntersection;
    if cm.is_degenerate() {
        return Ok(RpwResult::new(tv(mu, nu), p, k, method));
    }
    let eps = match p {
        Exponent::Infinite => bottleneck_profile(mu, nu, cm)?.rpw(k),
        Exponent::Finite(_) => {
            let mut builder = ProfileBuilder::new(mu.masses(), nu.masses(), cm.powered(p), p);
            if k == 0.0 {
                zero_cost_deficit(&mut builder)
            } else {
                while !crossing_resolved(&builder, p, k) && builder.step() {}
                snap(crossing(builder.breakpoints(), p, k))
            }
        }
    };
    Ok(RpwResult::new(eps, p, k, method))
}

/// One minus the largest mass movable at zero cost.
fn zero_cost_deficit(builder: &mut ProfileBuilder) -> f64 {
    while builder.step() {
        if builder.last_slope() > ZERO_SLOPE {
            break;
        }
    }
    let bp = builder.breakpoints();
    let free = match bp.get(1) {
        Some(&(m, c)) if c <= ZERO_SLOPE => m,
        _ => 0.0,
    };
    snap(1.0 - free)
}

/// Mass deficits within the mass tolerance are round-off.
fn snap(deficit: f64) -> f64 {
    if deficit <= MASS_TOLERANCE {
        0.0
    } else {
        deficit
    }
}

/// The profile already rises above `y = k (1 - x)` at the last computed mass.
fn crossing_resolved(builder: &ProfileBuilder, p: Exponent, k: f64) -> bool {
    builder.mass() > 0.0 && p.root(builder.cost()) >= k * (1.0 - builder.mass())
}

/// The guessing procedure: start at `g = 1/2`, move by `2^-(i+1)` towards the side
/// indicated by one partial-OT solve, stop once `2^-i <= delta`.
pub fn rpw_binary_search(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    p: Exponent,
    k: f64,
    delta: f64,
) -> Result<RpwResult> {
    check_k(k)?;
    if k == 0.0 {
        return Err(Error::param("k", "binary search needs k > 0; use tv for k = 0"));
    }
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::param("delta", format!("must lie in (0, 0.5], got {delta}")));
    }
    check_inputs(mu, nu, cm)?;
    let mut guess = 0.5;
    let mut step = 0.5;
    while step > delta {
        let w = partial_ot(mu, nu, cm, 1.0 - guess, p)?.w_p();
        step *= 0.5;
        if w <= k * guess {
            guess -= step;
        } else {
            guess += step;
        }
    }
    Ok(RpwResult::new(guess, p, k, Method::BinarySearch))
}

/// RPW from a truncated OT-profile whose p-th-power cost is within
/// `delta' = (k delta / 2)^p` of the exact one, giving `rpw <= result <= rpw + delta`.
///
/// After each augmentation the unknown tail of the profile is bounded above by
/// continuing at the largest ground cost. Construction stops once that bound is
/// within `delta'` of the convexity lower bound, or once the crossing lies inside the
/// exact prefix.
pub fn rpw_approx(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    p: Exponent,
    k: f64,
    delta: f64,
) -> Result<RpwResult> {
    check_k(k)?;
    if k == 0.0 {
        return Err(Error::param("k", "approximate profile needs k > 0; use tv for k = 0"));
    }
    if p.is_infinite() {
        return Err(Error::param("p", "approximate profile needs finite p"));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::param("delta", format!("must be positive, got {delta}")));
    }
    check_inputs(mu, nu, cm)?;
    if cm.is_degenerate() {
        return Ok(RpwResult::new(tv(mu, nu), p, k, Method::ApproxProfile));
    }
    let tolerance = p.pow(k * delta / 2.0);
    let powered = cm.powered(p);
    let max_unit_cost = powered.iter().copied().fold(0.0, f64::max);
    let target = mu.total_mass().min(nu.total_mass());
    let mut builder = ProfileBuilder::new(mu.masses(), nu.masses(), powered, p);
    loop {
        if crossing_resolved(&builder, p, k) || builder.is_finished() {
            break;
        }
        let rest = (target - builder.mass()).max(0.0);
        let gap = (max_unit_cost - builder.last_slope()).max(0.0) * rest;
        if gap <= tolerance {
            let mut bp = builder.breakpoints().to_vec();
            if rest > 0.0 {
                bp.push((target, builder.cost() + rest * max_unit_cost));
            }
            let eps = crossing(&bp, p, k);
            return Ok(RpwResult::new(eps, p, k, Method::ApproxProfile));
        }
        builder.step();
    }
    let eps = crossing(builder.breakpoints(), p, k);
    Ok(RpwResult::new(eps, p, k, Method::ApproxProfile))
}

/// Total variation distance with atoms matched by exact coordinate equality.
pub fn tv(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> f64 {
    let mut other: HashMap<Vec<u64>, f64> = HashMap::with_capacity(nu.len());
    for (x, &m) in nu.points().zip(nu.masses()) {
        *other.entry(location_key(x)).or_insert(0.0) += m;
    }
    // Summed in first-occurrence order so the result does not depend on coordinate values.
    let mut slot: HashMap<Vec<u64>, usize> = HashMap::with_capacity(mu.len());
    let mut here: Vec<(f64, f64)> = Vec::with_capacity(mu.len());
    for (x, &m) in mu.points().zip(mu.masses()) {
        let key = location_key(x);
        match slot.get(&key) {
            Some(&i) => here[i].0 += m,
            None => {
                here.push((m, other.get(&key).copied().unwrap_or(0.0)));
                slot.insert(key, here.len() - 1);
            }
        }
    }
    if here.iter().all(|&(_, b)| b == 0.0) {
        return 1.0;
    }
    here.iter().map(|&(a, b)| (a - b).max(0.0)).sum::<f64>().clamp(0.0, 1.0)
}

/// Lévy-Prokhorov distance, computed as `RPW_{inf,1}` and cross-checked against a
/// direct scan of disc-graph max-flows. Disagreement beyond `1e-7` is a solver error.
pub fn levy_prokhorov(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cm: &CostMatrix) -> Result<f64> {
    let via_rpw = rpw(mu, nu, cm, Exponent::Infinite, 1.0)?.epsilon;
    let via_scan = levy_prokhorov_scan(mu, nu, cm)?;
    if (via_rpw - via_scan).abs() > 1e-7 {
        return Err(Error::Solver(format!(
            "Lévy-Prokhorov paths disagree: {via_rpw} vs {via_scan}"
        )));
    }
    Ok(via_rpw)
}

/// `min_j max(delta_j, 1 - F(delta_j))` over the sorted distinct costs, with each
/// `F(delta_j)` from an independent max-flow on the disc graph.
pub fn levy_prokhorov_scan(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cm: &CostMatrix) -> Result<f64> {
    check_inputs(mu, nu, cm)?;
    let mut best: f64 = 1.0;
    for delta in cm.distinct_costs() {
        if delta >= best {
            break;
        }
        let carried = max_flow_disc(mu, nu, cm, delta)?;
        best = best.min(delta.max(1.0 - carried));
    }
    Ok(best.max(0.0))
}

/// `W_p(mu, nu)`: a full partial plan at `alpha = 1`, or the bottleneck value for `p = inf`.
pub fn wasserstein(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    p: Exponent,
) -> Result<f64> {
    check_inputs(mu, nu, cm)?;
    Ok(partial_ot(mu, nu, cm, 1.0, p)?.w_p())
}

/// A distance between two distributions, as used by the batch drivers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Rpw { p: Exponent, k: f64 },
    RpwApprox { p: Exponent, k: f64, delta: f64 },
    RpwBinarySearch { p: Exponent, k: f64, delta: f64 },
    Wasserstein { p: Exponent },
    TotalVariation,
    LevyProkhorov,
}

impl Metric {
    pub fn evaluate(&self, mu: &DiscreteDistribution, nu: &DiscreteDistribution, cm: &CostMatrix) -> Result<f64> {
        match *self {
            Metric::Rpw { p, k } => rpw(mu, nu, cm, p, k).map(|r| r.epsilon),
            Metric::RpwApprox { p, k, delta } => {
                if k == 0.0 {
                    rpw(mu, nu, cm, p, k).map(|r| r.epsilon)
                } else {
                    rpw_approx(mu, nu, cm, p, k, delta).map(|r| r.epsilon)
                }
            }
            Metric::RpwBinarySearch { p, k, delta } => {
                rpw_binary_search(mu, nu, cm, p, k, delta).map(|r| r.epsilon)
            }
            Metric::Wasserstein { p } => wasserstein(mu, nu, cm, p),
            Metric::TotalVariation => Ok(tv(mu, nu)),
            Metric::LevyProkhorov => levy_prokhorov(mu, nu, cm),
        }
    }

    /// Whether the metric needs the `p = inf` max-flow machinery.
    pub fn is_bottleneck(&self) -> bool {
        match *self {
            Metric::Rpw { p, .. }
            | Metric::RpwApprox { p, .. }
            | Metric::RpwBinarySearch { p, .. }
            | Metric::Wasserstein { p } => p.is_infinite(),
            Metric::LevyProkhorov => true,
            Metric::TotalVariation => false,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Rpw { p, k } | Metric::RpwApprox { p, k, .. } | Metric::RpwBinarySearch { p, k, .. } => {
                write!(f, "RPW({p},{k})")
            }
            Metric::Wasserstein { p } => write!(f, "W_{p}"),
            Metric::TotalVariation => f.write_str("TV"),
            Metric::LevyProkhorov => f.write_str("LP"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    /// Accepts `TV`, `LP`, `W_p` / `Wp` and `RPW(p,k)`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let upper = t.to_ascii_uppercase();
        if upper == "TV" {
            return Ok(Metric::TotalVariation);
        }
        if upper == "LP" {
            return Ok(Metric::LevyProkhorov);
        }
        if let Some(inner) = upper.strip_prefix("RPW(").and_then(|r| r.strip_suffix(')')) {
            let (p, k) = inner
                .split_once(',')
                .ok_or_else(|| Error::param("metric", format!("expected RPW(p,k), got `{t}`")))?;
            let p: Exponent = p.parse()?;
            let k: f64 = k
                .trim()
                .parse()
                .map_err(|_| Error::param("metric", format!("bad k in `{t}`")))?;
            check_k(k)?;
            return Ok(Metric::Rpw { p, k });
        }
        if let Some(p) = upper.strip_prefix("W_").or_else(|| upper.strip_prefix('W')) {
            return Ok(Metric::Wasserstein { p: p.parse()? });
        }
        Err(Error::param("metric", format!("unknown metric `{t}`")))
    }
}

/// All-pairs distance matrix with costs normalized by a shared space diameter,
/// evaluated on a pool of `jobs` worker threads.
pub fn pairwise(
    dists: &[DiscreteDistribution],
    space_diameter: f64,
    metric: Metric,
    jobs: usize,
) -> Result<Vec<Vec<f64>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Solver(e.to_string()))?;
    let n = dists.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let cm = cost_matrix(&dists[i], &dists[j])?.normalize_by(space_diameter)?;
                metric.evaluate(&dists[i], &dists[j], &cm)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut out = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        out[i][j] = v;
        out[j][i] = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> (DiscreteDistribution, DiscreteDistribution, CostMatrix) {
        let mu = DiscreteDistribution::from_points(&[vec![0.0], vec![1.0]], &[0.5, 0.5]).unwrap();
        let nu = DiscreteDistribution::from_points(&[vec![0.0], vec![1.0]], &[0.4, 0.6]).unwrap();
        let cm = cost_matrix(&mu, &nu).unwrap();
        (mu, nu, cm)
    }

    fn outlier_fixture() -> (DiscreteDistribution, DiscreteDistribution, CostMatrix) {
        let mu = DiscreteDistribution::from_points(&[vec![0.0]], &[1.0]).unwrap();
        let nu = DiscreteDistribution::from_points(&[vec![0.0], vec![1.0]], &[0.99, 0.01]).unwrap();
        let cm = cost_matrix(&mu, &nu).unwrap();
        (mu, nu, cm)
    }

    const P1: Exponent = Exponent::Finite(1.0);
    const P2: Exponent = Exponent::Finite(2.0);

    #[test]
    fn identity_is_zero() {
        let (mu, _, _) = two_by_two();
        let cm = cost_matrix(&mu, &mu).unwrap();
        for p in [P1, P2, Exponent::Infinite] {
            for k in [0.0, 0.1, 1.0, 10.0] {
                assert_eq!(rpw(&mu, &mu, &cm, p, k).unwrap().epsilon, 0.0);
            }
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        let (mu, nu, cm) = two_by_two();
        let r = rpw(&mu, &nu, &cm, P1, 1.0).unwrap();
        assert!((r.epsilon - 0.05).abs() < 1e-12);
        assert!((r.x_star - 0.95).abs() < 1e-12);
        assert!((r.y_star - 0.05).abs() < 1e-12);
        assert_eq!(r.method, Method::ProfileIntersection);
    }

    #[test]
    fn outlier_closed_form() {
        let (mu, nu, cm) = outlier_fixture();
        let r = rpw(&mu, &nu, &cm, P2, 1.0).unwrap();
        let expect = (-1.0 + 1.04f64.sqrt()) / 2.0;
        assert!((r.epsilon - expect).abs() < 1e-12);
        assert!(r.epsilon <= 0.01);
    }

    #[test]
    fn k_zero_is_tv() {
        let (mu, nu, cm) = two_by_two();
        for p in [P1, P2, Exponent::Infinite] {
            let r = rpw(&mu, &nu, &cm, p, 0.0).unwrap();
            assert!((r.epsilon - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_negative_k_and_unnormalized() {
        let (mu, nu, cm) = two_by_two();
        assert!(rpw(&mu, &nu, &cm, P1, -1.0).is_err());
        let big = CostMatrix::from_raw(2, 2, vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        assert!(matches!(rpw(&mu, &nu, &big, P1, 1.0), Err(Error::Unnormalized { .. })));
    }

    #[test]
    fn degenerate_costs_fall_back_to_tv() {
        let mu = DiscreteDistribution::from_points(&[vec![0.0]], &[1.0]).unwrap();
        let cm = cost_matrix(&mu, &mu).unwrap().normalize();
        assert!(cm.is_degenerate());
        assert_eq!(rpw(&mu, &mu, &cm, P2, 1.0).unwrap().epsilon, 0.0);
    }

    #[test]
    fn binary_search_examples() {
        let (mu, _, _) = two_by_two();
        let cm = cost_matrix(&mu, &mu).unwrap();
        let d = 2f64.powi(-10);
        let r = rpw_binary_search(&mu, &mu, &cm, P2, 1.0, d).unwrap();
        assert!(r.epsilon <= d);

        let (mu, nu, cm) = two_by_two();
        let r = rpw_binary_search(&mu, &nu, &cm, P1, 1.0, 1e-4).unwrap();
        assert!((r.epsilon - 0.05).abs() <= 1e-4);
        assert_eq!(r.method, Method::BinarySearch);

        assert!(rpw_binary_search(&mu, &nu, &cm, P1, 0.0, 0.1).is_err());
        assert!(rpw_binary_search(&mu, &nu, &cm, P1, 1.0, 0.0).is_err());
        assert!(rpw_binary_search(&mu, &nu, &cm, P1, 1.0, 0.75).is_err());
    }

    #[test]
    fn approx_examples() {
        let (mu, nu, cm) = two_by_two();
        let r = rpw_approx(&mu, &nu, &cm, P1, 1.0, 0.01).unwrap();
        assert!((0.05 - 1e-12..=0.06).contains(&r.epsilon));
        assert_eq!(r.method, Method::ApproxProfile);

        let same = cost_matrix(&mu, &mu).unwrap();
        assert_eq!(rpw_approx(&mu, &mu, &same, P2, 1.0, 0.1).unwrap().epsilon, 0.0);

        assert!(rpw_approx(&mu, &nu, &cm, P1, 0.0, 0.01).is_err());
        assert!(rpw_approx(&mu, &nu, &cm, Exponent::Infinite, 1.0, 0.01).is_err());
    }

    #[test]
    fn approx_truncates_when_allowed() {
        // a coarse delta lets the tail bound stand in for the last segment
        let (mu, nu, cm) = outlier_fixture();
        let exact = rpw(&mu, &nu, &cm, P2, 1.0).unwrap().epsilon;
        let approx = rpw_approx(&mu, &nu, &cm, P2, 1.0, 0.4).unwrap().epsilon;
        assert!(approx >= exact - 1e-12 && approx <= exact + 0.4);
    }

    #[test]
    fn tv_examples() {
        let (mu, nu, _) = two_by_two();
        assert_eq!(tv(&mu, &mu), 0.0);
        assert!((tv(&mu, &nu) - 0.1).abs() < 1e-15);
        let far = DiscreteDistribution::from_points(&[vec![5.0]], &[1.0]).unwrap();
        assert_eq!(tv(&mu, &far), 1.0);
    }

    #[test]
    fn levy_prokhorov_examples() {
        let (mu, nu, cm) = two_by_two();
        assert!((levy_prokhorov(&mu, &nu, &cm).unwrap() - 0.1).abs() < 1e-12);
        let (mu, nu, cm) = outlier_fixture();
        assert!((levy_prokhorov(&mu, &nu, &cm).unwrap() - 0.01).abs() < 1e-12);
        let cm = cost_matrix(&mu, &mu).unwrap();
        assert_eq!(levy_prokhorov(&mu, &mu, &cm).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_outlier_values() {
        let (mu, nu, cm) = outlier_fixture();
        assert!((wasserstein(&mu, &nu, &cm, P2).unwrap() - 0.1).abs() < 1e-12);
        let w3 = wasserstein(&mu, &nu, &cm, Exponent::Finite(3.0)).unwrap();
        assert!((w3 - 0.01f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((w3 - 0.2154).abs() < 1e-4);
        assert_eq!(wasserstein(&mu, &nu, &cm, Exponent::Infinite).unwrap(), 1.0);
    }

    #[test]
    fn metric_parsing_and_labels() {
        for s in ["TV", "LP", "W_2", "W1", "RPW(2,1)", "RPW(2,0.1)", "RPW(inf,1)"] {
            let m: Metric = s.parse().unwrap();
            assert!(!m.to_string().is_empty());
        }
        assert_eq!("RPW(2,0.1)".parse::<Metric>().unwrap().to_string(), "RPW(2,0.1)");
        assert_eq!("w_2".parse::<Metric>().unwrap().to_string(), "W_2");
        assert!("RPW(2,-1)".parse::<Metric>().is_err());
        assert!("KL".parse::<Metric>().is_err());
    }

    #[test]
    fn pairwise_is_symmetric() {
        let pts = |xs: &[f64]| xs.iter().map(|&x| vec![x]).collect::<Vec<_>>();
        let dists = vec![
            DiscreteDistribution::uniform(&pts(&[0.0, 0.5])).unwrap(),
            DiscreteDistribution::uniform(&pts(&[0.25, 1.0])).unwrap(),
            DiscreteDistribution::uniform(&pts(&[0.0, 1.0])).unwrap(),
        ];
        let d = pairwise(&dists, 1.0, Metric::Rpw { p: P2, k: 1.0 }, 2).unwrap();
        for i in 0..3 {
            assert_eq!(d[i][i], 0.0);
            for j in 0..3 {
                assert_eq!(d[i][j], d[j][i]);
            }
        }
    }
}
