//! The `rpw` command-line front end.
//!
//! Every command parses and validates all of its inputs before computing anything and
//! writes output files atomically, so a failed run never leaves partial files behind.
//! Exit codes: 0 ok, 2 I/O or parse error, 3 invalid parameters, 4 solver failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::distributions::{cost_matrix, CostMatrix, DiscreteDistribution, Exponent};
use crate::experiments::{
    convergence_experiment, grid_excess_sweep, grid_transport_sweep, outlier_experiment, ConvergenceConfig,
    SyntheticSampler,
};
use crate::io::{read_distribution_csv, write_atomic};
use crate::retrieval::{perturb, retrieve, standard_metrics, synthetic_blob_corpus, LabeledCorpus, Scenario};
use crate::rpw::{levy_prokhorov, rpw, rpw_approx, rpw_binary_search, tv, wasserstein, Method, Metric};
use crate::{ot_profile, Error, Result};

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "RPW_SEED";

#[derive(Parser, Debug)]
#[command(name = "rpw", version, about = "Robust partial p-Wasserstein distances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distance between two distribution CSV files, printed as JSON.
    Dist(DistArgs),
    /// OT-profile of two distributions as CSV.
    Profile(ProfileArgs),
    /// Empirical convergence-rate experiment.
    Converge(ConvergeArgs),
    /// Image retrieval benchmark.
    Retrieve(RetrieveArgs),
    /// Outlier contamination experiment.
    Outlier(OutlierArgs),
    /// Grid excess mass and two-grid transport certificate sweeps.
    Grid(GridArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DistMetric {
    /// Exact (p,k)-RPW from the OT-profile.
    Rpw,
    /// (p,k)-RPW by binary search over partial OT solves.
    RpwBs,
    /// (p,k)-RPW from a truncated profile.
    RpwApprox,
    /// p-Wasserstein.
    W,
    /// Total variation.
    Tv,
    /// Lévy-Prokhorov.
    Lp,
}

#[derive(Args, Debug)]
struct Normalization {
    /// Diameter of the ambient space; costs are divided by it. Defaults to the largest
    /// pairwise cost.
    #[arg(long)]
    diameter: Option<f64>,
}

#[derive(Args, Debug)]
struct DistArgs {
    #[arg(long, value_enum, default_value = "rpw")]
    metric: DistMetric,
    #[arg(long, default_value = "2")]
    p: Exponent,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    /// Accuracy for the binary-search and approximate variants.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    #[command(flatten)]
    norm: Normalization,
    /// Write the JSON here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    mu: PathBuf,
    nu: PathBuf,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long, default_value = "2")]
    p: Exponent,
    #[command(flatten)]
    norm: Normalization,
    #[arg(long, short)]
    output: Option<PathBuf>,
    mu: PathBuf,
    nu: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SamplerArg {
    TwoPoint,
    Grid4x4,
    UniformSquare,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for batch computations.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long, value_enum, default_value = "two-point")]
    sampler: SamplerArg,
    /// Ambient dimension for the uniform sampler.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Sample sizes, comma separated and ascending.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 1000, 10000])]
    n: Vec<usize>,
    /// Metric such as `W_2`, `TV`, `LP` or `RPW(2,1)`; repeat for several. Defaults to
    /// W_2, TV and RPW(2,k) for k in 0.1, 1, 10.
    #[arg(long = "metric")]
    metrics: Vec<Metric>,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    #[command(flatten)]
    common: Common,
    /// Per-run CSV (metric,n,seed,value).
    #[arg(long, short)]
    output: PathBuf,
    /// Slope summary CSV (metric,slope,stderr).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Log-log SVG plot of the means.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    /// Directory with labels.csv and images; a synthetic blob corpus is used when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    labeled: usize,
    #[arg(long, default_value_t = 20)]
    queries: usize,
    /// Use the full-scale sizes of 2000 labeled images and 50 queries.
    #[arg(long, conflicts_with_all = ["labeled", "queries"])]
    full_scale: bool,
    /// Side length of synthetic images.
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value = "noise_and_shift")]
    scenario: Scenario,
    /// Metric; repeat for several. Defaults to W_1, W_2, TV, RPW(2,1), RPW(2,0.1).
    #[arg(long = "metric")]
    metrics: Vec<Metric>,
    #[arg(long, default_value_t = 100)]
    m_max: usize,
    #[command(flatten)]
    common: Common,
    /// Report CSV (metric,scenario,m,accuracy).
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct OutlierArgs {
    #[arg(long, default_value = "2")]
    p: Exponent,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.2])]
    deltas: Vec<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    mu: PathBuf,
    nu: PathBuf,
    /// Noise distribution mixed into `nu`.
    nu_prime: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GridMode {
    Excess,
    Transport,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, value_enum, default_value = "excess")]
    mode: GridMode,
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000, 10000, 100000])]
    n: Vec<usize>,
    /// Cell side exponent for the excess sweep.
    #[arg(long, default_value_t = 0.25)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    #[command(flatten)]
    common: Common,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Dist(a) => cmd_dist(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Outlier(a) => cmd_outlier(a),
        Command::Grid(a) => cmd_grid(a),
    }
}

fn seed(common: &Common) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::param("seed", format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(common.seed),
    }
}

fn check_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(Error::param("jobs", "must be at least 1"));
    }
    Ok(())
}

fn emit(output: Option<&Path>, contents: &str) -> Result<()> {
    match output {
        Some(path) => write_atomic(path, contents.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn normalized(mu: &DiscreteDistribution, nu: &DiscreteDistribution, norm: &Normalization) -> Result<CostMatrix> {
    let cm = cost_matrix(mu, nu)?;
    match norm.diameter {
        Some(d) => cm.normalize_by(d),
        None => Ok(cm.normalize()),
    }
}

#[derive(Serialize)]
struct RpwJson {
    epsilon: f64,
    x_star: f64,
    y_star: f64,
    p: Exponent,
    k: f64,
    method: Method,
    wall_time_ms: f64,
    n_mu: usize,
    n_nu: usize,
}

#[derive(Serialize)]
struct ValueJson {
    metric: String,
    value: f64,
    wall_time_ms: f64,
    n_mu: usize,
    n_nu: usize,
}

fn cmd_dist(a: DistArgs) -> Result<()> {
    if !(a.k.is_finite() && a.k >= 0.0) {
        return Err(Error::param("k", format!("must be finite and non-negative, got {}", a.k)));
    }
    let mu = read_distribution_csv(&a.mu)?;
    let nu = read_distribution_csv(&a.nu)?;
    let cm = normalized(&mu, &nu, &a.norm)?;
    let start = Instant::now();
    let (n_mu, n_nu) = (mu.len(), nu.len());
    let elapsed = |s: Instant| s.elapsed().as_secs_f64() * 1e3;
    let json = match a.metric {
        DistMetric::Rpw | DistMetric::RpwBs | DistMetric::RpwApprox => {
            let r = match a.metric {
                DistMetric::Rpw => rpw(&mu, &nu, &cm, a.p, a.k)?,
                DistMetric::RpwBs => rpw_binary_search(&mu, &nu, &cm, a.p, a.k, a.delta)?,
                _ => rpw_approx(&mu, &nu, &cm, a.p, a.k, a.delta)?,
            };
            serde_json::to_string_pretty(&RpwJson {
                epsilon: r.epsilon,
                x_star: r.x_star,
                y_star: r.y_star,
                p: r.p,
                k: r.k,
                method: r.method,
                wall_time_ms: elapsed(start),
                n_mu,
                n_nu,
            })?
        }
        other => {
            let (metric, value) = match other {
                DistMetric::W => (Metric::Wasserstein { p: a.p }, wasserstein(&mu, &nu, &cm, a.p)?),
                DistMetric::Tv => (Metric::TotalVariation, tv(&mu, &nu)),
                _ => (Metric::LevyProkhorov, levy_prokhorov(&mu, &nu, &cm)?),
            };
            serde_json::to_string_pretty(&ValueJson {
                metric: metric.to_string(),
                value,
                wall_time_ms: elapsed(start),
                n_mu,
                n_nu,
            })?
        }
    };
    emit(a.output.as_deref(), &(json + "\n"))
}

fn cmd_profile(a: ProfileArgs) -> Result<()> {
    if a.p.is_infinite() {
        return Err(Error::param("p", "the OT-profile is defined for finite p"));
    }
    let mu = read_distribution_csv(&a.mu)?;
    let nu = read_distribution_csv(&a.nu)?;
    let cm = normalized(&mu, &nu, &a.norm)?;
    let profile = ot_profile(&mu, &nu, &cm, a.p)?;
    emit(a.output.as_deref(), &profile.to_csv()?)
}

fn cmd_converge(a: ConvergeArgs) -> Result<()> {
    check_jobs(a.common.jobs)?;
    let sampler = match a.sampler {
        SamplerArg::TwoPoint => SyntheticSampler::two_point(),
        SamplerArg::Grid4x4 => SyntheticSampler::grid4x4(),
        SamplerArg::UniformSquare => SyntheticSampler::uniform_square(a.dim)?,
    };
    let mut config = ConvergenceConfig::standard(a.n, seed(&a.common)?);
    if !a.metrics.is_empty() {
        config.metrics = a.metrics;
    }
    config.repetitions = a.repetitions;
    config.jobs = a.common.jobs;
    let report = convergence_experiment(&sampler, &config)?;
    let csv = report.to_csv()?;
    let summary = report.summary_csv()?;
    let svg = report.to_svg();
    write_atomic(&a.output, csv.as_bytes())?;
    if let Some(path) = &a.summary {
        write_atomic(path, summary.as_bytes())?;
    }
    if let Some(path) = &a.svg {
        write_atomic(path, svg.as_bytes())?;
    }
    Ok(())
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<()> {
    check_jobs(a.common.jobs)?;
    let seed = seed(&a.common)?;
    let (labeled, queries) = if a.full_scale { (2000, 50) } else { (a.labeled, a.queries) };
    if a.m_max == 0 || a.m_max > labeled {
        return Err(Error::param("m_max", format!("must lie in [1, {labeled}], got {}", a.m_max)));
    }
    let corpus = match &a.data {
        Some(dir) => LabeledCorpus::load(dir, labeled, queries, seed)?,
        None => synthetic_blob_corpus(labeled, queries, a.size, seed)?,
    };
    let metrics = if a.metrics.is_empty() { standard_metrics() } else { a.metrics };
    let perturbed = perturb(&corpus, a.scenario, seed)?;
    let report = retrieve(&perturbed, &metrics, a.m_max, a.scenario, a.common.jobs)?;
    write_atomic(&a.output, report.to_csv()?.as_bytes())
}

fn cmd_outlier(a: OutlierArgs) -> Result<()> {
    let mu = read_distribution_csv(&a.mu)?;
    let nu = read_distribution_csv(&a.nu)?;
    let nu_prime = read_distribution_csv(&a.nu_prime)?;
    let table = outlier_experiment(&mu, &nu, &nu_prime, &a.deltas, a.p, a.k)?;
    emit(a.output.as_deref(), &table.to_csv()?)
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    check_jobs(a.common.jobs)?;
    let seed = seed(&a.common)?;
    let report = match a.mode {
        GridMode::Excess => grid_excess_sweep(&a.n, a.alpha, a.repetitions, seed, a.common.jobs)?,
        GridMode::Transport => grid_transport_sweep(&a.n, a.repetitions, seed, a.common.jobs)?,
    };
    let csv = report.to_csv()?;
    let summary = report.summary_csv()?;
    write_atomic(&a.output, csv.as_bytes())?;
    if let Some(path) = &a.summary {
        write_atomic(path, summary.as_bytes())?;
    }
    Ok(())
}
