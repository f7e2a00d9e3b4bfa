//! Experiment harnesses: empirical convergence rates, outlier contamination and
//! grid excess mass.
//!
//! Every harness is a pure function of its inputs and seed. Independent tasks run on a
//! bounded rayon pool and results are merged in task order, so reports are
//! bit-identical across runs and thread counts.

mod convergence;
mod grid;
mod outlier;

pub use convergence::{convergence_experiment, ConvergenceConfig, ConvergenceReport, ConvergenceRow};
pub use grid::{
    discretized_measure, grid_certificate_comparison, grid_excess, grid_excess_sweep, grid_transport_bound,
    grid_transport_sweep, AnalyticMeasure, CertificateComparison, GridExcess, GridTransport, SweepReport,
    SweepRow,
};
pub use outlier::{outlier_experiment, OutlierRow, OutlierTable};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distributions::DiscreteDistribution;
use crate::{Error, Result};

/// Largest sample size accepted by the exact-solver harnesses.
pub const N_MAX: usize = 100_000;

/// Rows with `n` below this are left out of slope fits.
pub const MIN_FIT_N: usize = 100;

/// Deterministic generator for one `(seed, stream)` task.
pub(crate) fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Solver(e.to_string()))
}

/// Source distribution for empirical samples.
#[derive(Clone, Debug, PartialEq)]
pub enum SamplerKind {
    /// Two atoms of mass 1/2 at unit distance.
    TwoPoint,
    /// 16 atoms of mass 1/16 on a 4x4 lattice of unit diameter.
    Grid4x4,
    /// Uniform measure on `[0, 1]^d`.
    UniformSquare,
    Custom(DiscreteDistribution),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSampler {
    pub kind: SamplerKind,
    pub d: usize,
}

impl SyntheticSampler {
    pub fn two_point() -> Self {
        Self {
            kind: SamplerKind::TwoPoint,
            d: 2,
        }
    }

    pub fn grid4x4() -> Self {
        Self {
            kind: SamplerKind::Grid4x4,
            d: 2,
        }
    }

    pub fn uniform_square(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "dimension must be at least 1"));
        }
        Ok(Self {
            kind: SamplerKind::UniformSquare,
            d,
        })
    }

    pub fn custom(dist: DiscreteDistribution) -> Self {
        Self {
            d: dist.dim(),
            kind: SamplerKind::Custom(dist),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            SamplerKind::TwoPoint => "two_point",
            SamplerKind::Grid4x4 => "grid4x4",
            SamplerKind::UniformSquare => "uniform_square",
            SamplerKind::Custom(_) => "custom",
        }
    }

    /// The finite source distribution, or `None` for the continuous sampler.
    pub fn atoms(&self) -> Option<DiscreteDistribution> {
        match &self.kind {
            SamplerKind::TwoPoint => {
                let mut b = vec![0.0; self.d];
                b[0] = 1.0;
                DiscreteDistribution::from_points(&[vec![0.0; self.d], b], &[0.5, 0.5]).ok()
            }
            SamplerKind::Grid4x4 => {
                let step = 1.0 / (3.0 * 2f64.sqrt());
                let points: Vec<Vec<f64>> = (0..16)
                    .map(|i| vec![(i / 4) as f64 * step, (i % 4) as f64 * step])
                    .collect();
                DiscreteDistribution::uniform(&points).ok()
            }
            SamplerKind::UniformSquare => None,
            SamplerKind::Custom(d) => Some(d.clone()),
        }
    }

    /// Diameter of the ambient space used to normalize ground costs.
    pub fn space_diameter(&self) -> f64 {
        match &self.kind {
            SamplerKind::TwoPoint | SamplerKind::Grid4x4 => 1.0,
            SamplerKind::UniformSquare => (self.d as f64).sqrt(),
            SamplerKind::Custom(d) => {
                let diam = d.support_diameter();
                if diam > 0.0 {
                    diam
                } else {
                    1.0
                }
            }
        }
    }

    /// Largest support size an `n`-sample empirical distribution can have.
    pub fn max_support(&self, n: usize) -> usize {
        match &self.kind {
            SamplerKind::UniformSquare => n,
            _ => self.atoms().map_or(n, |a| a.len().min(n)),
        }
    }

    /// Empirical distribution of `n` i.i.d. draws. Repeated atoms of a finite source
    /// are merged, which leaves the measure unchanged.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<DiscreteDistribution> {
        if n == 0 {
            return Err(Error::param("n", "sample size must be positive"));
        }
        match self.atoms() {
            None => {
                let coords: Vec<f64> = (0..n * self.d).map(|_| rng.gen::<f64>()).collect();
                DiscreteDistribution::from_flat(self.d, coords, vec![1.0; n])
            }
            Some(source) => {
                let pick = WeightedIndex::new(source.masses()).map_err(|e| Error::param("sampler", e.to_string()))?;
                let mut counts = vec![0usize; source.len()];
                for _ in 0..n {
                    counts[pick.sample(rng)] += 1;
                }
                let mut coords = Vec::new();
                let mut masses = Vec::new();
                for (i, &c) in counts.iter().enumerate() {
                    if c > 0 {
                        coords.extend_from_slice(source.point(i));
                        masses.push(c as f64);
                    }
                }
                DiscreteDistribution::from_flat(source.dim(), coords, masses)
            }
        }
    }
}

/// Ordinary least-squares fit of `log y` against `log n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub metric: String,
    pub slope: f64,
    pub stderr: f64,
}

/// Slope and its standard error for `(n, y)` pairs with `n >= MIN_FIT_N` and `y > 0`.
/// Needs at least two usable points.
pub fn fit_loglog(points: &[(usize, f64)]) -> Option<(f64, f64)> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(n, y)| n >= MIN_FIT_N && y > 0.0 && y.is_finite())
        .map(|&(n, y)| ((n as f64).ln(), y.ln()))
        .collect();
    if xy.len() < 2 {
        return None;
    }
    let len = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / len;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let stderr = if xy.len() > 2 {
        let ssr: f64 = xy.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
        (ssr / (len - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some((slope, stderr))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Log-log line chart with one polyline per series.
pub fn loglog_svg(title: &str, series: &[(String, Vec<(usize, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.1.iter())
        .filter(|p| p.1 > 0.0)
        .map(|&(n, y)| ((n as f64).log10(), y.log10()))
        .collect();
    let (x0, x1) = bounds(pts.iter().map(|p| p.0));
    let (y0, y1) = bounds(pts.iter().map(|p| p.1));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    out += &format!("<text x=\"{}\" y=\"24\" text-anchor=\"middle\">{}</text>\n", W / 2.0, escape(title));
    out += &format!(
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    out += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">log10 n</text>\n",
        W / 2.0,
        H - 15.0
    );
    out += &format!("<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">log10 distance</text>\n", H / 2.0, H / 2.0);
    for (idx, (name, data)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let line: Vec<String> = data
            .iter()
            .filter(|p| p.1 > 0.0)
            .map(|&(n, y)| format!("{:.2},{:.2}", sx((n as f64).log10()), sy(y.log10())))
            .collect();
        out += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            line.join(" ")
        );
        out += &format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            W - PAD + 5.0,
            PAD + 15.0 * idx as f64,
            escape(name)
        );
    }
    out += "</svg>\n";
    out
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
