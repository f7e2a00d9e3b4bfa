//! Robust partial p-Wasserstein (RPW) distances between discrete distributions.
//!
//! The crate is organised bottom-up:
//!
//! - [`distributions`]: weighted point sets, ground-cost matrices, transport plans and
//!   ingestion of CSV point clouds and grayscale images.
//! - [`exact_ot`]: exact combinatorial solvers. Successive shortest paths gives partial
//!   OT plans and the full OT-profile; max-flow on threshold graphs handles `p = inf`.
//! - [`rpw`]: the `(p,k)`-RPW metric, its binary-search and approximate-profile variants,
//!   total variation, Lévy-Prokhorov and p-Wasserstein distances.
//! - [`experiments`]: convergence-rate, outlier-contamination and grid-excess harnesses.
//! - [`retrieval`]: nearest-neighbour image retrieval benchmark.
//! - [`cli`]: the `rpw` command-line front end.

pub mod cli;
pub mod distributions;
mod error;
pub mod exact_ot;
pub mod experiments;
pub mod io;
pub mod retrieval;
pub mod rpw;

pub use distributions::{CostMatrix, DiscreteDistribution, Exponent, GrayImage, TransportPlan};
pub use error::{Error, Result};
pub use exact_ot::{
    bottleneck_profile, max_flow_disc, ot_profile, partial_ot, BottleneckProfile, OtProfile,
};
pub use rpw::{
    levy_prokhorov, rpw, rpw_approx, rpw_binary_search, tv, wasserstein, Method, Metric,
    RpwResult,
};

/// Slack used for every probability-mass comparison.
pub const MASS_TOLERANCE: f64 = 1e-9;
