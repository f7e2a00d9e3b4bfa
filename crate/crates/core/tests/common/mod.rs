//! Shared instance generators and independent oracles for the integration tests.

#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpw::distributions::cost_matrix;
use rpw::{CostMatrix, DiscreteDistribution, Exponent};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` atoms in `[0, 1]^d` with random positive masses. With `lattice = Some(g)` the
/// coordinates are drawn from `{0, 1/g, ..., 1}` so supports of different
/// distributions overlap.
pub fn random_dist<R: Rng>(rng: &mut R, n: usize, d: usize, lattice: Option<u32>) -> DiscreteDistribution {
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| match lattice {
                    Some(g) => rng.gen_range(0..=g) as f64 / g as f64,
                    None => rng.gen::<f64>(),
                })
                .collect()
        })
        .collect();
    let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    DiscreteDistribution::from_points(&points, &masses).unwrap()
}

/// [`random_dist`] with a support size drawn uniformly from `lo..=hi`.
pub fn random_dist_between<R: Rng>(rng: &mut R, lo: usize, hi: usize, d: usize, lattice: Option<u32>) -> DiscreteDistribution {
    let n = rng.gen_range(lo..=hi);
    random_dist(rng, n, d, lattice)
}

/// Costs normalized by the diagonal of the unit cube, so every pair from the same
/// cube shares one unit-diameter space.
pub fn unit_cube_costs(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> CostMatrix {
    cost_matrix(mu, nu)
        .unwrap()
        .normalize_by((mu.dim() as f64).sqrt())
        .unwrap()
}

/// Least `sum x_ij c_ij^p` over sub-couplings of total mass `alpha`, by linear programming.
pub fn lp_partial_cost(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cm: &CostMatrix, alpha: f64, p: f64) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let (n, m) = (mu.len(), nu.len());
    let vars: Vec<_> = (0..n * m)
        .map(|idx| lp.add_var(cm.get(idx / m, idx % m).powf(p), (0.0, f64::INFINITY)))
        .collect();
    for i in 0..n {
        let row: Vec<_> = (0..m).map(|j| (vars[i * m + j], 1.0)).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, mu.masses()[i]);
    }
    for j in 0..m {
        let col: Vec<_> = (0..n).map(|i| (vars[i * m + j], 1.0)).collect();
        lp.add_constraint(col.as_slice(), ComparisonOp::Le, nu.masses()[j]);
    }
    let all: Vec<_> = vars.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(all.as_slice(), ComparisonOp::Eq, alpha);
    lp.solve().expect("partial OT LP is feasible").objective()
}

/// Lévy-Prokhorov distance by enumerating every subset `A` of the support of `mu`:
/// the least `delta` with `mu(A) <= nu(A^delta) + delta` for all `A`, where `A^delta` is
/// the closed `delta`-neighbourhood. Exponential in the support size.
pub fn lp_by_subsets(mu: &DiscreteDistribution, nu: &DiscreteDistribution, cm: &CostMatrix) -> f64 {
    let (n, m) = (mu.len(), nu.len());
    assert!(n <= 16);
    let mut levels: Vec<f64> = cm.as_slice().to_vec();
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut best: f64 = 1.0;
    for &d in &levels {
        let mut worst: f64 = 0.0;
        for mask in 1u32..(1 << n) {
            let mass_a: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| mu.masses()[i]).sum();
            let mass_nbhd: f64 = (0..m)
                .filter(|&j| (0..n).any(|i| mask >> i & 1 == 1 && cm.get(i, j) <= d))
                .map(|j| nu.masses()[j])
                .sum();
            worst = worst.max(mass_a - mass_nbhd);
        }
        best = best.min(d.max(worst));
    }
    best
}

pub const P1: Exponent = Exponent::Finite(1.0);
pub const P2: Exponent = Exponent::Finite(2.0);
