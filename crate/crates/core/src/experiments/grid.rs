use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::convergence::into_string;
use super::{fit_loglog, mean, task_rng, thread_pool, N_MAX};
use crate::distributions::{cost_matrix, DiscreteDistribution, Exponent};
use crate::rpw::rpw;
use crate::{Error, Result};

/// Fine and coarse cell exponents of the two-grid construction.
const ALPHA_FINE: f64 = 0.3;
const ALPHA_COARSE: f64 = 0.2;

/// Reference measure with exactly computable cell masses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticMeasure {
    /// Uniform on `[0, 1]^d`.
    UniformCube { d: usize },
}

impl AnalyticMeasure {
    pub fn uniform_square() -> Self {
        AnalyticMeasure::UniformCube { d: 2 }
    }

    pub fn dim(&self) -> usize {
        match *self {
            AnalyticMeasure::UniformCube { d } => d,
        }
    }

    /// Mass of every cell of the grid with `m` cells per axis.
    pub fn cell_mass(&self, m: usize) -> f64 {
        match *self {
            AnalyticMeasure::UniformCube { d } => (m as f64).powi(d as i32).recip(),
        }
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect()
    }

    /// Diameter of the support, used to normalize distances.
    pub fn diameter(&self) -> f64 {
        (self.dim() as f64).sqrt()
    }
}

/// Cells per axis for cell side `n^-alpha`.
fn cells_per_axis(n: usize, alpha: f64) -> usize {
    ((n as f64).powf(alpha).round() as usize).max(1)
}

fn cell_index(x: &[f64], m: usize) -> Result<u64> {
    let mut idx: u64 = 0;
    for &c in x {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::param("samples", format!("coordinate {c} outside the unit cube")));
        }
        let i = ((c * m as f64) as usize).min(m - 1) as u64;
        idx = idx
            .checked_mul(m as u64)
            .and_then(|v| v.checked_add(i))
            .ok_or_else(|| Error::TooLarge {
                message: "grid has too many cells".into(),
            })?;
    }
    Ok(idx)
}

fn check_samples(samples: &[Vec<f64>], measure: &AnalyticMeasure) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptySupport);
    }
    for s in samples {
        if s.len() != measure.dim() {
            return Err(Error::DimensionMismatch {
                expected: measure.dim(),
                found: s.len(),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridExcess {
    pub excess: f64,
    pub cells_per_axis: usize,
    /// `alpha >= 1/d`: the cells are too small for the excess bound to say anything.
    pub trivial_regime: bool,
}

/// `sum over cells of max(0, mu(cell) - count(cell)/n)` on the grid of side `n^-alpha`.
pub fn grid_excess(samples: &[Vec<f64>], alpha: f64, measure: &AnalyticMeasure) -> Result<GridExcess> {
    check_samples(samples, measure)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    let n = samples.len();
    let d = measure.dim();
    let m = cells_per_axis(n, alpha);
    let cells = (m as f64).powi(d as i32);
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for s in samples {
        *counts.entry(cell_index(s, m)?).or_insert(0) += 1;
    }
    let mass = measure.cell_mass(m);
    let mut occupied: Vec<usize> = counts.into_values().collect();
    occupied.sort_unstable();
    let hit: f64 = occupied.iter().map(|&c| (mass - c as f64 / n as f64).max(0.0)).sum();
    let empty = (cells - occupied.len() as f64) * mass;
    Ok(GridExcess {
        excess: hit + empty,
        cells_per_axis: m,
        trivial_regime: alpha >= 1.0 / d as f64,
    })
}

/// Result of the two-grid transport construction, in unit-diameter units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridTransport {
    pub n: usize,
    pub fine_cells: usize,
    pub coarse_cells: usize,
    pub fine_mass: f64,
    pub coarse_mass: f64,
    /// `1 - |gamma|`, the excess mass of the coarse grid.
    pub untransported: f64,
    /// Upper bound on `w_2(gamma)` from the cell diagonals.
    pub cost_bound: f64,
    /// `max(untransported, cost_bound)`, an upper bound on `RPW_{2,1}`.
    pub certificate: f64,
}

/// Transports within fine cells first, then the residual within the aligned coarse
/// cells. Distances are divided by the square diagonal, so a cell with `m` cells per
/// axis has normalized diagonal `1/m`.
pub fn grid_transport_bound(samples: &[Vec<f64>], measure: &AnalyticMeasure) -> Result<GridTransport> {
    if measure.dim() != 2 {
        return Err(Error::param("measure", "the two-grid construction is defined for d = 2"));
    }
    check_samples(samples, measure)?;
    let n = samples.len();
    let (fine, coarse) = grid_sizes(n);
    let ratio = fine / coarse;
    let mut counts = vec![0usize; fine * fine];
    for s in samples {
        counts[cell_index(s, fine)? as usize] += 1;
    }
    let mu_fine = measure.cell_mass(fine);
    let mu_coarse = measure.cell_mass(coarse);
    let inv_n = 1.0 / n as f64;

    let mut fine_mass = 0.0;
    let mut left_mu = vec![0.0; coarse * coarse];
    let mut left_samples = vec![0.0; coarse * coarse];
    let mut coarse_counts = vec![0usize; coarse * coarse];
    for r in 0..fine {
        for c in 0..fine {
            let cnt = counts[r * fine + c];
            let here = cnt as f64 * inv_n;
            let moved = mu_fine.min(here);
            fine_mass += moved;
            let k = (r / ratio) * coarse + c / ratio;
            left_mu[k] += mu_fine - moved;
            left_samples[k] += here - moved;
            coarse_counts[k] += cnt;
        }
    }
    let coarse_mass: f64 = left_mu.iter().zip(&left_samples).map(|(a, b)| a.min(*b)).sum();
    let untransported: f64 = coarse_counts
        .iter()
        .map(|&c| (mu_coarse - c as f64 * inv_n).max(0.0))
        .sum::<f64>()
        .clamp(0.0, 1.0);
    let cost_bound = (fine_mass / (fine * fine) as f64 + coarse_mass / (coarse * coarse) as f64).sqrt();
    Ok(GridTransport {
        n,
        fine_cells: fine,
        coarse_cells: coarse,
        fine_mass,
        coarse_mass,
        untransported,
        cost_bound,
        certificate: untransported.max(cost_bound),
    })
}

/// Cells per axis `(fine, coarse)`; the fine count is a multiple of the coarse one so the
/// cell boundaries align.
fn grid_sizes(n: usize) -> (usize, usize) {
    let coarse = cells_per_axis(n, ALPHA_COARSE);
    let factor = (((n as f64).powf(ALPHA_FINE) / coarse as f64).round() as usize).max(1);
    (coarse * factor, coarse)
}

/// `measure` collapsed to the centers of the grid with `cells` cells per axis.
pub fn discretized_measure(measure: &AnalyticMeasure, cells: usize) -> Result<DiscreteDistribution> {
    if cells == 0 {
        return Err(Error::param("cells", "must be positive"));
    }
    let d = measure.dim();
    let total = cells.checked_pow(d as u32).filter(|&t| t <= N_MAX).ok_or_else(|| Error::TooLarge {
        message: format!("{cells}^{d} grid cells"),
    })?;
    let mut coords = Vec::with_capacity(total * d);
    for mut idx in 0..total {
        let mut point = vec![0.0; d];
        for axis in (0..d).rev() {
            point[axis] = ((idx % cells) as f64 + 0.5) / cells as f64;
            idx /= cells;
        }
        coords.extend(point);
    }
    DiscreteDistribution::from_flat(d, coords, vec![measure.cell_mass(cells); total])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateComparison {
    pub transport: GridTransport,
    pub exact_rpw: f64,
}

/// Certificate versus the exact `RPW_{2,1}` between the measure discretized on the fine
/// grid and `n` uniform samples.
pub fn grid_certificate_comparison(n: usize, seed: u64) -> Result<CertificateComparison> {
    let measure = AnalyticMeasure::uniform_square();
    let samples = measure.sample(n, &mut task_rng(seed, n as u64));
    let transport = grid_transport_bound(&samples, &measure)?;
    let grid = discretized_measure(&measure, transport.fine_cells)?;
    let empirical = DiscreteDistribution::uniform(&samples)?;
    let cm = cost_matrix(&grid, &empirical)?.normalize_by(measure.diameter())?;
    let exact_rpw = rpw(&grid, &empirical, &cm, Exponent::Finite(2.0), 1.0)?.epsilon;
    Ok(CertificateComparison { transport, exact_rpw })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub quantity: String,
    pub n: usize,
    pub seed: u64,
    pub value: f64,
}

/// Monte-Carlo rows over sample sizes and seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub quantities: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn means(&self, quantity: &str) -> Vec<(usize, f64)> {
        let mut ns: Vec<usize> = self.rows.iter().filter(|r| r.quantity == quantity).map(|r| r.n).collect();
        ns.dedup();
        ns.into_iter()
            .map(|n| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.quantity == quantity && r.n == n)
                    .map(|r| r.value)
                    .collect();
                (n, mean(&v))
            })
            .collect()
    }

    pub fn slope(&self, quantity: &str) -> Option<(f64, f64)> {
        fit_loglog(&self.means(quantity))
    }

    /// Columns `quantity,n,seed,value`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        into_string(w)
    }

    /// Columns `metric,slope,stderr`.
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "slope", "stderr"])?;
        for q in &self.quantities {
            if let Some((slope, se)) = self.slope(q) {
                w.serialize((q, slope, se))?;
            }
        }
        into_string(w)
    }
}

fn sweep<F>(n_list: &[usize], repetitions: usize, seed: u64, jobs: usize, quantities: &[&str], task: F) -> Result<SweepReport>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>> + Sync,
{
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::param("n_list", "sample sizes must be positive and strictly ascending"));
    }
    if *n_list.last().unwrap() > N_MAX {
        return Err(Error::param("n_list", format!("sample sizes are capped at {N_MAX}")));
    }
    if repetitions == 0 {
        return Err(Error::param("repetitions", "must be positive"));
    }
    let tasks: Vec<(usize, u64)> = n_list
        .iter()
        .flat_map(|&n| (0..repetitions as u64).map(move |r| (n, seed.wrapping_add(r))))
        .collect();
    let pool = thread_pool(jobs)?;
    let values = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, s)| {
                let samples = AnalyticMeasure::uniform_square().sample(n, &mut task_rng(s, n as u64));
                task(&samples)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = tasks
        .iter()
        .zip(values)
        .flat_map(|(&(n, s), vals)| {
            quantities.iter().zip(vals).map(move |(q, value)| SweepRow {
                quantity: q.to_string(),
                n,
                seed: s,
                value,
            })
        })
        .collect();
    Ok(SweepReport {
        quantities: quantities.iter().map(|q| q.to_string()).collect(),
        rows,
    })
}

/// Excess mass of uniform samples in the unit square over sizes and seeds.
pub fn grid_excess_sweep(n_list: &[usize], alpha: f64, repetitions: usize, seed: u64, jobs: usize) -> Result<SweepReport> {
    let measure = AnalyticMeasure::uniform_square();
    sweep(n_list, repetitions, seed, jobs, &["excess"], |s| {
        Ok(vec![grid_excess(s, alpha, &measure)?.excess])
    })
}

/// Two-grid certificate components of uniform samples over sizes and seeds.
pub fn grid_transport_sweep(n_list: &[usize], repetitions: usize, seed: u64, jobs: usize) -> Result<SweepReport> {
    let measure = AnalyticMeasure::uniform_square();
    sweep(n_list, repetitions, seed, jobs, &["untransported", "cost_bound", "certificate"], |s| {
        let t = grid_transport_bound(s, &measure)?;
        Ok(vec![t.untransported, t.cost_bound, t.certificate])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excess_single_cell() {
        let m = AnalyticMeasure::UniformCube { d: 1 };
        let e = grid_excess(&[vec![0.3]], 0.1, &m).unwrap();
        assert_eq!(e.cells_per_axis, 1);
        assert_eq!(e.excess, 0.0);
    }

    #[test]
    fn excess_left_half() {
        let m = AnalyticMeasure::UniformCube { d: 1 };
        let samples = vec![vec![0.1], vec![0.2], vec![0.3], vec![0.4]];
        let e = grid_excess(&samples, 0.5, &m).unwrap();
        assert_eq!(e.cells_per_axis, 2);
        assert!((e.excess - 0.5).abs() < 1e-15);
        assert!(!e.trivial_regime);
        assert!(grid_excess(&samples, 1.0, &m).unwrap().trivial_regime);
    }

    #[test]
    fn excess_rejects_bad_input() {
        let m = AnalyticMeasure::uniform_square();
        assert!(grid_excess(&[], 0.25, &m).is_err());
        assert!(grid_excess(&[vec![0.5]], 0.25, &m).is_err());
        assert!(grid_excess(&[vec![0.5, 1.5]], 0.25, &m).is_err());
        assert!(grid_excess(&[vec![0.5, 0.5]], 0.0, &m).is_err());
    }

    #[test]
    fn aligned_grid_sizes() {
        for n in [10, 100, 1000, 2000, 10_000, 100_000] {
            let (f, c) = grid_sizes(n);
            assert_eq!(f % c, 0);
            assert!(f >= c);
        }
    }

    #[test]
    fn samples_at_fine_centers_move_everything() {
        // n = 1024 gives 8 fine cells per axis; 16 samples at each fine center
        let measure = AnalyticMeasure::uniform_square();
        let grid = discretized_measure(&measure, 8).unwrap();
        let samples: Vec<Vec<f64>> = grid.points().flat_map(|p| std::iter::repeat(p.to_vec()).take(16)).collect();
        let t = grid_transport_bound(&samples, &measure).unwrap();
        assert_eq!(t.fine_cells, 8);
        assert!(t.untransported < 1e-12);
        assert!(t.cost_bound <= (1024f64).powf(-0.3) + 1e-12);
    }

    #[test]
    fn certificate_dominates_exact_small() {
        for seed in 0..3 {
            let c = grid_certificate_comparison(60, seed).unwrap();
            assert!(c.transport.certificate >= c.exact_rpw - 1e-9);
        }
    }

    #[test]
    fn discretization_masses() {
        let d = discretized_measure(&AnalyticMeasure::uniform_square(), 3).unwrap();
        assert_eq!(d.len(), 9);
        assert!((d.point(4)[0] - 0.5).abs() < 1e-15 && (d.point(4)[1] - 0.5).abs() < 1e-15);
    }
}
