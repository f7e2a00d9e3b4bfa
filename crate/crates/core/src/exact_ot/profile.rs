use serde::Serialize;

use super::ssp::{TransportSolver, FLOW_EPS};
use crate::distributions::Exponent;

/// Slopes closer than this are merged into a single profile segment.
const SLOPE_MERGE: f64 = 1e-12;

/// Exact OT-profile in p-th-power form: `C(mass)` is the least `sum mass * c^p` over
/// sub-couplings moving `mass`. `C` is convex and piecewise linear between the
/// breakpoints; the profile value at `alpha` is `C(alpha)^(1/p)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OtProfile {
    pub breakpoints: Vec<(f64, f64)>,
    pub p: Exponent,
}

#[derive(Serialize)]
struct ProfileRow {
    mass: f64,
    p_power_cost: f64,
    wp_value: f64,
}

impl OtProfile {
    pub fn max_mass(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |b| b.0)
    }

    /// `C(alpha)` by linear interpolation; masses past the last breakpoint clamp to it.
    pub fn cost_at(&self, alpha: f64) -> f64 {
        cost_at(&self.breakpoints, alpha)
    }

    /// Partial p-Wasserstein distance `W_{p,alpha}`.
    pub fn w_at(&self, alpha: f64) -> f64 {
        self.p.root(self.cost_at(alpha))
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.breakpoints
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect()
    }

    /// CSV with columns `mass,p_power_cost,wp_value`.
    pub fn to_csv(&self) -> crate::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for &(mass, c) in &self.breakpoints {
            w.serialize(ProfileRow {
                mass,
                p_power_cost: c,
                wp_value: self.p.root(c),
            })?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

pub(crate) fn cost_at(bp: &[(f64, f64)], alpha: f64) -> f64 {
    if alpha <= 0.0 || bp.len() < 2 {
        return 0.0;
    }
    let last = bp[bp.len() - 1];
    if alpha >= last.0 {
        return last.1;
    }
    let k = bp.partition_point(|b| b.0 < alpha);
    let (m0, c0) = bp[k - 1];
    let (m1, c1) = bp[k];
    c0 + (c1 - c0) * (alpha - m0) / (m1 - m0)
}

/// Incremental profile construction: one successive-shortest-path augmentation per step.
pub(crate) struct ProfileBuilder {
    solver: TransportSolver,
    p: Exponent,
    breakpoints: Vec<(f64, f64)>,
    last_slope: f64,
    target: f64,
    finished: bool,
}

impl ProfileBuilder {
    pub fn new(supply: &[f64], demand: &[f64], powered_cost: Vec<f64>, p: Exponent) -> Self {
        let target = supply.iter().sum::<f64>().min(demand.iter().sum());
        Self {
            solver: TransportSolver::new(supply.to_vec(), demand.to_vec(), powered_cost),
            p,
            breakpoints: vec![(0.0, 0.0)],
            last_slope: f64::NEG_INFINITY,
            target,
            finished: false,
        }
    }

    pub fn mass(&self) -> f64 {
        self.breakpoints.last().unwrap().0
    }

    pub fn cost(&self) -> f64 {
        self.breakpoints.last().unwrap().1
    }

    /// Slope of the last computed segment, 0 before the first augmentation.
    pub fn last_slope(&self) -> f64 {
        if self.breakpoints.len() < 2 {
            0.0
        } else {
            self.last_slope
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Runs one augmentation. Returns `false` once the profile is complete.
    pub fn step(&mut self) -> bool {
        if self.finished {
            return false;
        }
        let remaining = self.target - self.solver.total_flow();
        let Some(aug) = (remaining > FLOW_EPS)
            .then(|| self.solver.augment(remaining))
            .flatten()
        else {
            self.finished = true;
            self.snap_final_mass();
            return false;
        };
        let (m, c) = *self.breakpoints.last().unwrap();
        let next = (m + aug.mass, c + aug.mass * aug.slope.max(0.0));
        let same = self.breakpoints.len() >= 2
            && (aug.slope - self.last_slope).abs() <= SLOPE_MERGE * aug.slope.abs().max(1.0);
        if same {
            *self.breakpoints.last_mut().unwrap() = next;
        } else {
            self.breakpoints.push(next);
            self.last_slope = aug.slope;
        }
        true
    }

    // total mass is one up to round-off; pin the terminal breakpoint to the exact target
    fn snap_final_mass(&mut self) {
        let segments = self.breakpoints.len() - 1;
        if let Some(last) = self.breakpoints.last_mut() {
            if (last.0 - self.target).abs() <= 1e-9 && segments > 0 {
                last.0 = self.target;
            }
        }
    }

    pub fn run(&mut self) {
        while self.step() {}
    }

    pub fn into_profile(self) -> OtProfile {
        OtProfile {
            breakpoints: self.breakpoints,
            p: self.p,
        }
    }
}

/// Smallest `eps` in `[1 - M, 1]` with `C(1 - eps)^(1/p) <= k * eps`, where `M` is the
/// last breakpoint mass. Requires `k > 0`.
///
/// `C(1 - eps)^(1/p)` is nonincreasing and `k * eps` strictly increasing, so the
/// crossing is unique; it is located segment by segment and then solved in closed
/// form (`p = 1, 2`) or by bisection.
pub(crate) fn crossing(bp: &[(f64, f64)], p: Exponent, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    let (m_last, c_last) = *bp.last().unwrap();
    let eps_lo = (1.0 - m_last).max(0.0);
    if p.root(c_last) <= k * eps_lo {
        return eps_lo;
    }
    for i in (1..bp.len()).rev() {
        let (m0, c0) = bp[i - 1];
        let (m1, c1) = bp[i];
        let hi = 1.0 - m0;
        if p.root(c0) <= k * hi {
            let lo = 1.0 - m1;
            let slope = (c1 - c0) / (m1 - m0);
            let a = c0 + slope * (1.0 - m0);
            return solve_segment(a, slope, p, k, lo, hi);
        }
    }
    1.0
}

/// Root of `(a - b*eps)^(1/p) = k*eps` on `[lo, hi]`.
fn solve_segment(a: f64, b: f64, p: Exponent, k: f64, lo: f64, hi: f64) -> f64 {
    let eps = match p {
        Exponent::Finite(q) if q == 1.0 => a / (k + b),
        Exponent::Finite(q) if q == 2.0 => {
            // k^2 eps^2 + b eps - a = 0, in the cancellation-free form
            let a = a.max(0.0);
            2.0 * a / (b + (b * b + 4.0 * k * k * a).sqrt())
        }
        _ => {
            let h = |e: f64| p.root(a - b * e) - k * e;
            let (mut l, mut r) = (lo, hi);
            for _ in 0..200 {
                if r - l <= 1e-13 {
                    break;
                }
                let mid = 0.5 * (l + r);
                if h(mid) > 0.0 {
                    l = mid;
                } else {
                    r = mid;
                }
            }
            r
        }
    };
    if eps.is_nan() {
        hi
    } else {
        eps.clamp(lo, hi)
    }
}
