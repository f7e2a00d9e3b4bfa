use serde::Serialize;

use super::convergence::into_string;
use crate::distributions::{cost_matrix, euclidean, DiscreteDistribution, Exponent};
use crate::rpw::{rpw, wasserstein};
use crate::{Error, Result};

/// Slack allowed on each side of the contamination sandwich.
const SANDWICH_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutlierRow {
    pub delta: f64,
    pub rpw_clean: f64,
    pub rpw_contaminated: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub sandwich_holds: bool,
    pub wp_clean: f64,
    pub wp_contaminated: f64,
    /// `delta^(1/p)` times the normalized distance from the outliers to the support of `mu`.
    pub wp_outlier_scale: f64,
    /// `rpw / min(delta, W_p / k)`, logged for inspection only.
    pub robustness_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutlierTable {
    pub p: Exponent,
    pub k: f64,
    pub space_diameter: f64,
    pub rows: Vec<OutlierRow>,
}

impl OutlierTable {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.sandwich_holds)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        into_string(w)
    }
}

/// Contaminates `nu` with `nu_prime` at each rate `delta` and compares RPW with `W_p`.
///
/// All costs are normalized by the diameter of the union of the three supports so that
/// clean and contaminated values live in the same unit-diameter space.
pub fn outlier_experiment(
    mu: &DiscreteDistribution,
    nu: &DiscreteDistribution,
    nu_prime: &DiscreteDistribution,
    delta_list: &[f64],
    p: Exponent,
    k: f64,
) -> Result<OutlierTable> {
    for d in [nu.dim(), nu_prime.dim()] {
        if d != mu.dim() {
            return Err(Error::DimensionMismatch {
                expected: mu.dim(),
                found: d,
            });
        }
    }
    if let Some(&bad) = delta_list.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
        return Err(Error::param("delta", format!("must lie in (0, 1), got {bad}")));
    }
    if !(k.is_finite() && k >= 0.0) {
        return Err(Error::param("k", format!("must be finite and non-negative, got {k}")));
    }

    let union = mu.mixture(nu, 0.5)?.mixture(nu_prime, 1.0 / 3.0)?;
    let diameter = match union.support_diameter() {
        d if d > 0.0 => d,
        _ => 1.0,
    };
    let clean_cm = cost_matrix(mu, nu)?.normalize_by(diameter)?;
    let rpw_clean = rpw(mu, nu, &clean_cm, p, k)?.epsilon;
    let wp_clean = wasserstein(mu, nu, &clean_cm, p)?;
    let outlier_gap = nu_prime
        .points()
        .flat_map(|b| mu.points().map(move |a| euclidean(a, b)))
        .fold(f64::INFINITY, f64::min)
        / diameter;

    let mut rows = Vec::with_capacity(delta_list.len());
    for &delta in delta_list {
        let mixed = nu.mixture(nu_prime, delta)?;
        let cm = cost_matrix(mu, &mixed)?.normalize_by(diameter)?;
        let rpw_contaminated = rpw(mu, &mixed, &cm, p, k)?.epsilon;
        let wp_contaminated = wasserstein(mu, &mixed, &cm, p)?;
        let lower_bound = rpw_clean - delta;
        let upper_bound = (1.0 - delta) * rpw_clean + delta;
        let cap = if k > 0.0 { delta.min(wp_contaminated / k) } else { delta };
        rows.push(OutlierRow {
            delta,
            rpw_clean,
            rpw_contaminated,
            lower_bound,
            upper_bound,
            sandwich_holds: rpw_contaminated >= lower_bound - SANDWICH_SLACK
                && rpw_contaminated <= upper_bound + SANDWICH_SLACK,
            wp_clean,
            wp_contaminated,
            wp_outlier_scale: match p {
                Exponent::Finite(q) => delta.powf(1.0 / q) * outlier_gap,
                Exponent::Infinite => outlier_gap,
            },
            robustness_ratio: if cap > 0.0 { rpw_contaminated / cap } else { f64::NAN },
        });
    }
    Ok(OutlierTable {
        p,
        k,
        space_diameter: diameter,
        rows,
    })
}
