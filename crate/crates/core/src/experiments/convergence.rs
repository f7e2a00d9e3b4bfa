use rayon::prelude::*;
use serde::Serialize;

use super::{fit_loglog, loglog_svg, mean, task_rng, thread_pool, SlopeFit, SyntheticSampler, N_MAX};
use crate::distributions::{cost_matrix, Exponent};
use crate::rpw::Metric;
use crate::{Error, Result};

/// Dense cost-matrix entries allowed per pair for the successive-shortest-path solver.
const DENSE_LIMIT: usize = 4_000_000;
/// Same for the max-flow based metrics.
const BOTTLENECK_LIMIT: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceConfig {
    pub n_list: Vec<usize>,
    pub metrics: Vec<Metric>,
    pub seed: u64,
    pub repetitions: usize,
    pub jobs: usize,
}

impl ConvergenceConfig {
    /// `W_2`, `TV` and `RPW(2,k)` for `k` in `{0.1, 1, 10}`, 10 repetitions.
    pub fn standard(n_list: Vec<usize>, seed: u64) -> Self {
        let p = Exponent::Finite(2.0);
        Self {
            n_list,
            metrics: vec![
                Metric::Wasserstein { p },
                Metric::TotalVariation,
                Metric::Rpw { p, k: 0.1 },
                Metric::Rpw { p, k: 1.0 },
                Metric::Rpw { p, k: 10.0 },
            ],
            seed,
            repetitions: 10,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub metric: String,
    pub n: usize,
    pub seed: u64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub sampler: String,
    pub metrics: Vec<String>,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    fn values(&self, metric: &str, n: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && r.n == n)
            .map(|r| r.value)
            .collect()
    }

    fn n_values(&self) -> Vec<usize> {
        let mut ns: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        ns.dedup();
        ns
    }

    /// `(n, mean, standard error of the mean)` per sample size.
    pub fn summary(&self, metric: &str) -> Vec<(usize, f64, f64)> {
        self.n_values()
            .into_iter()
            .filter_map(|n| {
                let v = self.values(metric, n);
                if v.is_empty() {
                    return None;
                }
                let m = mean(&v);
                let se = if v.len() > 1 {
                    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
                    (var / v.len() as f64).sqrt()
                } else {
                    0.0
                };
                Some((n, m, se))
            })
            .collect()
    }

    pub fn means(&self, metric: &str) -> Vec<(usize, f64)> {
        self.summary(metric).into_iter().map(|(n, m, _)| (n, m)).collect()
    }

    pub fn slope(&self, metric: &str) -> Option<SlopeFit> {
        fit_loglog(&self.means(metric)).map(|(slope, stderr)| SlopeFit {
            metric: metric.to_string(),
            slope,
            stderr,
        })
    }

    pub fn slopes(&self) -> Vec<SlopeFit> {
        self.metrics.iter().filter_map(|m| self.slope(m)).collect()
    }

    /// Columns `metric,n,seed,value`.
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
        for fit in self.slopes() {
            w.serialize((&fit.metric, fit.slope, fit.stderr))?;
        }
        into_string(w)
    }

    pub fn to_svg(&self) -> String {
        let series: Vec<(String, Vec<(usize, f64)>)> =
            self.metrics.iter().map(|m| (m.clone(), self.means(m))).collect();
        loglog_svg(&format!("empirical convergence, {}", self.sampler), &series)
    }
}

pub(crate) fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// For each `n`, draws two independent `n`-sample empirical distributions per
/// repetition and evaluates every metric on them.
///
/// Repetition `r` uses seed `seed + r`; the sample size selects the RNG stream.
pub fn convergence_experiment(sampler: &SyntheticSampler, config: &ConvergenceConfig) -> Result<ConvergenceReport> {
    validate(sampler, config)?;
    let diameter = sampler.space_diameter();
    let tasks: Vec<(usize, u64)> = config
        .n_list
        .iter()
        .flat_map(|&n| (0..config.repetitions as u64).map(move |r| (n, config.seed.wrapping_add(r))))
        .collect();
    let pool = thread_pool(config.jobs)?;
    let results: Vec<Vec<ConvergenceRow>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, seed)| {
                let mut rng = task_rng(seed, n as u64);
                let x = sampler.sample(n, &mut rng)?;
                let y = sampler.sample(n, &mut rng)?;
                let cm = cost_matrix(&x, &y)?.normalize_by(diameter)?;
                config
                    .metrics
                    .iter()
                    .map(|m| {
                        Ok(ConvergenceRow {
                            metric: m.to_string(),
                            n,
                            seed,
                            value: m.evaluate(&x, &y, &cm)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ConvergenceReport {
        sampler: sampler.name().to_string(),
        metrics: config.metrics.iter().map(|m| m.to_string()).collect(),
        rows: results.into_iter().flatten().collect(),
    })
}

fn validate(sampler: &SyntheticSampler, config: &ConvergenceConfig) -> Result<()> {
    if config.n_list.is_empty() {
        return Err(Error::param("n_list", "at least one sample size is required"));
    }
    if config.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("n_list", "sample sizes must be strictly ascending"));
    }
    if config.n_list[0] == 0 {
        return Err(Error::param("n_list", "sample sizes must be positive"));
    }
    let n_max = *config.n_list.last().unwrap();
    if n_max > N_MAX {
        return Err(Error::param("n_list", format!("sample sizes are capped at {N_MAX}")));
    }
    if config.metrics.is_empty() {
        return Err(Error::param("metrics", "at least one metric is required"));
    }
    if config.repetitions == 0 {
        return Err(Error::param("repetitions", "must be positive"));
    }
    let support = sampler.max_support(n_max);
    let pairs = support.saturating_mul(support);
    let limit = if config.metrics.iter().any(Metric::is_bottleneck) {
        BOTTLENECK_LIMIT
    } else {
        DENSE_LIMIT
    };
    if pairs > limit {
        return Err(Error::TooLarge {
            message: format!("n = {n_max} gives {pairs} cost entries per pair, limit {limit}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_small_run() {
        let cfg = ConvergenceConfig {
            repetitions: 3,
            ..ConvergenceConfig::standard(vec![10, 100, 1000], 5)
        };
        let rep = convergence_experiment(&SyntheticSampler::two_point(), &cfg).unwrap();
        assert_eq!(rep.rows.len(), 3 * 3 * 5);
        for (n, m) in rep.means("TV") {
            assert!(m >= 0.0 && m <= 1.0, "n = {n}");
        }
        // W_2 = sqrt(TV) on two atoms at unit distance
        for (w, t) in rep.means("W_2").iter().zip(rep.means("TV")) {
            assert!((w.1 - t.1.sqrt()).abs() < 0.5);
        }
        assert!(rep.to_csv().unwrap().starts_with("metric,n,seed,value\n"));
        assert!(rep.summary_csv().unwrap().starts_with("metric,slope,stderr\n"));
    }

    #[test]
    fn rejects_bad_configs() {
        let s = SyntheticSampler::two_point();
        let bad = |n_list: Vec<usize>| convergence_experiment(&s, &ConvergenceConfig::standard(n_list, 0));
        assert!(matches!(bad(vec![]), Err(Error::InvalidParameter { .. })));
        assert!(matches!(bad(vec![100, 10]), Err(Error::InvalidParameter { .. })));
        assert!(matches!(bad(vec![10, 1_000_000]), Err(Error::InvalidParameter { .. })));

        let u = SyntheticSampler::uniform_square(2).unwrap();
        let cfg = ConvergenceConfig {
            metrics: vec![Metric::LevyProkhorov],
            ..ConvergenceConfig::standard(vec![10, 5000], 0)
        };
        assert!(matches!(convergence_experiment(&u, &cfg), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn jobs_do_not_change_results() {
        let s = SyntheticSampler::uniform_square(2).unwrap();
        let mut cfg = ConvergenceConfig::standard(vec![10, 30], 9);
        cfg.repetitions = 4;
        let a = convergence_experiment(&s, &cfg).unwrap();
        cfg.jobs = 3;
        let b = convergence_experiment(&s, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
