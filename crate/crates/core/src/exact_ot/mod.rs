//! Exact combinatorial optimal transport.
//!
//! Partial plans and OT-profiles come from successive shortest paths on the
//! transportation network; `p = inf` quantities come from maximum flow on threshold
//! ("disc") graphs that keep only pairs with `c(a, b) <= delta`.

mod flow;
mod profile;
mod ssp;

use serde::Serialize;

pub use profile::OtProfile;
pub(crate) use profile::{crossing, ProfileBuilder};

use crate::distributions::{CostMatrix, DiscreteDistribution, Exponent, PlanEdge, TransportPlan};
use crate::{Error, Result, MASS_TOLERANCE};
use flow::{Dinic, ThresholdMatcher};
use ssp::TransportSolver;

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("must lie in [0, 1], got {alpha}")))
    }
}

/// Cheapest sub-coupling moving exactly `alpha` mass.
///
/// For finite `p` the problem is balanced with a dummy sink absorbing `1 - alpha` of
/// `mu` and a dummy source supplying `1 - alpha` of `nu`, both at zero cost, and the
/// dummy-to-dummy pair forbidden. For `p = inf` the plan is a maximum flow on the
/// smallest threshold graph carrying `alpha`, scaled down to `alpha`.
pub fn partial_ot(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    alpha: f64,
    p: Exponent,
) -> Result<TransportPlan> {
    check_alpha(alpha)?;
    cm.check_shape(mu, nu)?;
    cm.require_unit()?;
    match p {
        Exponent::Finite(_) => Ok(partial_ot_dummy(mu, nu, cm, alpha, p)),
        Exponent::Infinite => partial_ot_bottleneck(mu, nu, cm, alpha),
    }
}

fn partial_ot_dummy(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    alpha: f64,
    p: Exponent,
) -> TransportPlan {
    let (n, m) = (mu.len(), nu.len());
    let slack = (1.0 - alpha).max(0.0);
    let mut supply = mu.masses().to_vec();
    supply.push(slack);
    let mut demand = nu.masses().to_vec();
    demand.push(slack);

    let mut cost = Vec::with_capacity((n + 1) * (m + 1));
    for i in 0..n {
        cost.extend((0..m).map(|j| p.pow(cm.get(i, j))));
        cost.push(0.0);
    }
    cost.extend(std::iter::repeat(0.0).take(m));
    cost.push(f64::INFINITY);

    let target = supply.iter().sum::<f64>().min(demand.iter().sum());
    let mut solver = TransportSolver::new(supply, demand, cost);
    solver.run_to(target);

    let edges = solver
        .positive_flows()
        .filter(|&(i, j, _)| i < n && j < m)
        .map(|(source, target, mass)| PlanEdge {
            source,
            target,
            mass,
        })
        .collect();
    TransportPlan::from_edges(edges, cm, p)
}

fn partial_ot_bottleneck(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    alpha: f64,
) -> Result<TransportPlan> {
    let p = Exponent::Infinite;
    if alpha <= 0.0 {
        return Ok(TransportPlan::from_edges(Vec::new(), cm, p));
    }
    let thresholds = cm.distinct_costs();
    let delta = smallest_threshold(mu, nu, cm, &thresholds, alpha)
        .ok_or_else(|| Error::Solver(format!("cannot route {alpha} mass")))?;
    let (carried, mut edges) = disc_flow(mu, nu, cm, delta);
    let scale = (alpha / carried).min(1.0);
    edges.retain(|e| e.mass > 0.0);
    for e in &mut edges {
        e.mass *= scale;
    }
    Ok(TransportPlan::from_edges(edges, cm, p))
}

/// Smallest threshold in `thresholds` whose disc graph carries at least `alpha`.
fn smallest_threshold(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    thresholds: &[f64],
    alpha: f64,
) -> Option<f64> {
    let (mut lo, mut hi) = (0usize, thresholds.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if disc_flow(mu, nu, cm, thresholds[mid]).0 >= alpha - MASS_TOLERANCE {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    thresholds.get(lo).copied()
}

fn disc_flow(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    delta: f64,
) -> (f64, Vec<PlanEdge>) {
    let (n, m) = (mu.len(), nu.len());
    let (s, t) = (n + m, n + m + 1);
    let mut g = Dinic::new(n + m + 2);
    for (i, &a) in mu.masses().iter().enumerate() {
        g.add_arc(s, i, a);
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if cm.get(i, j) <= delta {
                pairs.push((i, j, g.arc_count()));
                g.add_arc(i, n + j, f64::INFINITY);
            }
        }
    }
    for (j, &b) in nu.masses().iter().enumerate() {
        g.add_arc(n + j, t, b);
    }
    let value = g.max_flow(s, t);
    let edges = pairs
        .into_iter()
        .map(|(i, j, arc)| PlanEdge {
            source: i,
            target: j,
            mass: g.flow_on(arc),
        })
        .collect();
    (value, edges)
}

/// Largest mass routable from `mu` to `nu` through pairs with `c(a, b) <= delta`.
pub fn max_flow_disc(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    delta: f64,
) -> Result<f64> {
    cm.check_shape(mu, nu)?;
    if !(delta >= 0.0) {
        return Err(Error::param("delta", format!("must be non-negative, got {delta}")));
    }
    Ok(disc_flow(mu, nu, cm, delta).0)
}

/// Exact OT-profile for finite `p`, one breakpoint per distinct augmenting-path cost.
pub fn ot_profile(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
    p: Exponent,
) -> Result<OtProfile> {
    if p.is_infinite() {
        return Err(Error::param("p", "OT-profile needs finite p; use bottleneck_profile"));
    }
    cm.check_shape(mu, nu)?;
    cm.require_unit()?;
    let mut builder = ProfileBuilder::new(mu.masses(), nu.masses(), cm.powered(p), p);
    builder.run();
    Ok(builder.into_profile())
}

/// Transportable mass as a step function of the threshold: `flows[j]` is the
/// max-flow value on the disc graph at `thresholds[j]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BottleneckProfile {
    pub thresholds: Vec<f64>,
    pub flows: Vec<f64>,
}

impl BottleneckProfile {
    /// `W_{inf, alpha}`: the smallest threshold whose disc graph carries `alpha`.
    pub fn w_at(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            return 0.0;
        }
        let j = self
            .flows
            .partition_point(|&f| f < alpha - MASS_TOLERANCE);
        self.thresholds
            .get(j)
            .copied()
            .unwrap_or_else(|| *self.thresholds.last().unwrap_or(&0.0))
    }

    /// Transportable mass at threshold `delta`.
    pub fn flow_at(&self, delta: f64) -> f64 {
        let j = self.thresholds.partition_point(|&t| t <= delta);
        if j == 0 {
            0.0
        } else {
            self.flows[j - 1]
        }
    }

    /// `inf { eps : W_{inf, 1-eps} <= k * eps }`.
    pub fn rpw(&self, k: f64) -> f64 {
        if k == 0.0 {
            return unmatched(self.flow_at(0.0));
        }
        self.thresholds
            .iter()
            .zip(&self.flows)
            .map(|(&d, &f)| unmatched(f).max(d / k))
            .fold(1.0, f64::min)
            .max(0.0)
    }
}

/// `1 - flow`, with deficits inside the mass tolerance treated as zero.
fn unmatched(flow: f64) -> f64 {
    let gap = 1.0 - flow;
    if gap <= MASS_TOLERANCE {
        0.0
    } else {
        gap.min(1.0)
    }
}

/// Step function `delta -> F(delta)` over the sorted distinct costs, built by growing
/// the disc graph one cost level at a time and augmenting the previous flow.
pub fn bottleneck_profile(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    cm: &CostMatrix,
) -> Result<BottleneckProfile> {
    cm.check_shape(mu, nu)?;
    cm.require_unit()?;
    let total = mu.total_mass().min(nu.total_mass());
    let mut matcher = ThresholdMatcher::new(mu.masses(), nu.masses(), cm.as_slice());
    let mut thresholds = Vec::new();
    let mut flows = Vec::new();
    for delta in cm.distinct_costs() {
        let f = matcher.raise_to(delta);
        thresholds.push(delta);
        flows.push(f);
        if f >= total - MASS_TOLERANCE * 1e-3 {
            break;
        }
    }
    debug_assert!(matcher.total() <= total + MASS_TOLERANCE);
    Ok(BottleneckProfile { thresholds, flows })
}
