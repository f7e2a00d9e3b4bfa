//! Nearest-neighbour image retrieval under a chosen distance.
//!
//! A query is compared with every labeled image, the labeled images are ranked by
//! ascending distance (ties by id), and precision@m is averaged over the queries.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{cost_matrix, DiscreteDistribution, Exponent, GrayImage};
use crate::experiments::{task_rng, thread_pool};
use crate::io::read_image;
use crate::rpw::Metric;
use crate::{Error, Result};

/// Ground distances are divided by the diagonal of the unit square that holds every
/// image support.
pub const IMAGE_SPACE_DIAMETER: f64 = std::f64::consts::SQRT_2;

/// Accuracy of the approximate profile used for RPW rankings.
pub const RPW_DELTA: f64 = 1e-3;

const SHIFT_ROWS: usize = 2;
const NOISE_FRACTION: f64 = 0.1;
const SPECKLES: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub label: String,
    pub image: GrayImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCorpus {
    pub items: Vec<LabeledImage>,
    /// Query labels are only used for scoring.
    pub queries: Vec<LabeledImage>,
}

#[derive(Deserialize)]
struct LabelRecord {
    id: String,
    label: String,
    path: String,
}

/// Reads `labels.csv` (columns `id,label,path`, paths relative to `dir`) and every
/// image it lists.
pub fn load_labeled_images(dir: &Path) -> Result<Vec<LabeledImage>> {
    let index = dir.join("labels.csv");
    let mut reader = csv::Reader::from_path(&index)?;
    let mut out = Vec::new();
    for record in reader.deserialize() {
        let r: LabelRecord = record.map_err(|e| Error::parse(Some(&index), e.to_string()))?;
        out.push(LabeledImage {
            image: read_image(&dir.join(&r.path))?,
            id: r.id,
            label: r.label,
        });
    }
    Ok(out)
}

impl LabeledCorpus {
    pub fn new(items: Vec<LabeledImage>, queries: Vec<LabeledImage>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::param("corpus", "no labeled images"));
        }
        if queries.is_empty() {
            return Err(Error::param("corpus", "no query images"));
        }
        let mut seen = HashSet::new();
        for it in items.iter().chain(&queries) {
            if it.label.is_empty() {
                return Err(Error::param("corpus", format!("image `{}` has an empty label", it.id)));
            }
            if !seen.insert(it.id.as_str()) {
                return Err(Error::param("corpus", format!("duplicate image id `{}`", it.id)));
            }
        }
        Ok(Self { items, queries })
    }

    /// Random disjoint selection of `n_labeled` corpus images and `n_queries` queries.
    pub fn split(mut images: Vec<LabeledImage>, n_labeled: usize, n_queries: usize, seed: u64) -> Result<Self> {
        if n_labeled + n_queries > images.len() {
            return Err(Error::param(
                "corpus",
                format!("{} images requested but only {} available", n_labeled + n_queries, images.len()),
            ));
        }
        images.sort_by(|a, b| a.id.cmp(&b.id));
        images.shuffle(&mut task_rng(seed, 0));
        let queries = images.split_off(images.len() - n_queries);
        images.truncate(n_labeled);
        Self::new(images, queries)
    }

    pub fn load(dir: &Path, n_labeled: usize, n_queries: usize, seed: u64) -> Result<Self> {
        Self::split(load_labeled_images(dir)?, n_labeled, n_queries, seed)
    }
}

/// Three classes of roughly centered bar-shaped blobs (horizontal, vertical, diagonal)
/// with one pixel of position jitter, random length and intensity, plus a few bright
/// background speckles per image.
pub fn synthetic_blob_corpus(n_labeled: usize, n_queries: usize, size: usize, seed: u64) -> Result<LabeledCorpus> {
    if size < 8 {
        return Err(Error::param("size", "synthetic images need at least 8x8 pixels"));
    }
    let total = n_labeled + n_queries;
    let images = (0..total)
        .map(|i| {
            let mut rng = task_rng(seed, i as u64 + 1);
            let class = i % 3;
            LabeledImage {
                id: format!("blob{i:05}"),
                label: format!("class{class}"),
                image: blob_image(class, size, &mut rng),
            }
        })
        .collect();
    LabeledCorpus::split(images, n_labeled, n_queries, seed)
}

fn blob_image<R: Rng>(class: usize, size: usize, rng: &mut R) -> GrayImage {
    let mut img = GrayImage::zeros(size, size);
    let len = size / 2 + rng.gen_range(0..2);
    let r0 = (size - len) / 2 + rng.gen_range(0..3) - 1;
    let c0 = (size - len) / 2 + rng.gen_range(0..3) - 1;
    for t in 0..len {
        let (r, c) = match class {
            0 => (r0 + len / 2, c0 + t),
            1 => (r0 + t, c0 + len / 2),
            _ => (r0 + t, c0 + t),
        };
        for (dr, dc) in [(0, 0), (1, 0), (0, 1)] {
            let (rr, cc) = (r + dr, c + dc);
            if rr < size && cc < size {
                img.set(rr, cc, rng.gen_range(150.0..255.0));
            }
        }
    }
    for _ in 0..SPECKLES {
        let (r, c) = (rng.gen_range(0..size), rng.gen_range(0..size));
        img.set(r, c, img.get(r, c) + rng.gen_range(100.0..255.0));
    }
    img
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Clean,
    Noise,
    Shift,
    NoiseAndShift,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Clean => "clean",
            Scenario::Noise => "noise",
            Scenario::Shift => "shift",
            Scenario::NoiseAndShift => "noise_and_shift",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Scenario::Clean),
            "noise" => Ok(Scenario::Noise),
            "shift" => Ok(Scenario::Shift),
            "noise_and_shift" => Ok(Scenario::NoiseAndShift),
            _ => Err(Error::param("scenario", format!("unknown scenario `{s}`"))),
        }
    }
}

/// Adds `U(0, 0.1 * max intensity)` to one uniformly chosen pixel.
pub fn add_pixel_noise<R: Rng>(image: &GrayImage, rng: &mut R) -> GrayImage {
    let mut out = image.clone();
    let r = rng.gen_range(0..image.height);
    let c = rng.gen_range(0..image.width);
    let amount = rng.gen::<f64>() * NOISE_FRACTION * image.max_intensity();
    out.set(r, c, image.get(r, c) + amount);
    out
}

/// Moves every row up by `rows`; the top rows fall off and the bottom is zero-filled.
pub fn shift_up(image: &GrayImage, rows: usize) -> Result<GrayImage> {
    if rows >= image.height {
        return Err(Error::param(
            "shift",
            format!("cannot shift {rows} rows in an image of height {}", image.height),
        ));
    }
    let mut out = GrayImage::zeros(image.height, image.width);
    for r in 0..image.height - rows {
        for c in 0..image.width {
            out.set(r, c, image.get(r + rows, c));
        }
    }
    Ok(out)
}

/// Perturbs the labeled images; queries are left untouched.
pub fn perturb(corpus: &LabeledCorpus, scenario: Scenario, seed: u64) -> Result<LabeledCorpus> {
    let mut items = Vec::with_capacity(corpus.items.len());
    for (i, it) in corpus.items.iter().enumerate() {
        let mut rng = task_rng(seed, i as u64);
        let mut image = it.image.clone();
        if matches!(scenario, Scenario::Noise | Scenario::NoiseAndShift) {
            image = add_pixel_noise(&image, &mut rng);
        }
        if matches!(scenario, Scenario::Shift | Scenario::NoiseAndShift) {
            image = shift_up(&image, SHIFT_ROWS)?;
        }
        items.push(LabeledImage { image, ..it.clone() });
    }
    Ok(LabeledCorpus {
        items,
        queries: corpus.queries.clone(),
    })
}

/// RPW rankings use the approximate profile; every other metric is used as given.
pub fn ranking_metric(metric: Metric) -> Metric {
    match metric {
        Metric::Rpw { p: p @ Exponent::Finite(_), k } if k > 0.0 => Metric::RpwApprox {
            p,
            k,
            delta: RPW_DELTA,
        },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalRow {
    pub metric: String,
    pub scenario: String,
    pub m: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub rows: Vec<RetrievalRow>,
}

impl RetrievalReport {
    pub fn accuracy(&self, metric: &str, m: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric && r.m == m).map(|r| r.accuracy)
    }

    /// Columns `metric,scenario,m,accuracy`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Corpus indices sorted by ascending distance, ties broken by id.
pub fn rank(distances: &[f64], ids: &[&str]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then_with(|| ids[a].cmp(ids[b])));
    order
}

/// precision@m for `m = 1..=m_max`, averaged over the queries, for each metric.
pub fn retrieve(
    corpus: &LabeledCorpus,
    metrics: &[Metric],
    m_max: usize,
    scenario: Scenario,
    jobs: usize,
) -> Result<RetrievalReport> {
    if corpus.items.is_empty() || corpus.queries.is_empty() {
        return Err(Error::param("corpus", "corpus and queries must be nonempty"));
    }
    if m_max == 0 || m_max > corpus.items.len() {
        return Err(Error::param(
            "m_max",
            format!("must lie in [1, {}], got {m_max}", corpus.items.len()),
        ));
    }
    if metrics.is_empty() {
        return Err(Error::param("metrics", "at least one metric is required"));
    }
    let to_dist = |it: &LabeledImage| DiscreteDistribution::from_image(&it.image);
    let items: Vec<DiscreteDistribution> = corpus.items.iter().map(to_dist).collect::<Result<_>>()?;
    let queries: Vec<DiscreteDistribution> = corpus.queries.iter().map(to_dist).collect::<Result<_>>()?;
    let ids: Vec<&str> = corpus.items.iter().map(|it| it.id.as_str()).collect();

    let pool = thread_pool(jobs)?;
    let mut rows = Vec::new();
    for &metric in metrics {
        let used = ranking_metric(metric);
        let hits: Vec<Vec<usize>> = pool.install(|| {
            queries
                .par_iter()
                .zip(&corpus.queries)
                .map(|(q, query)| {
                    let dists = items
                        .iter()
                        .map(|it| {
                            let cm = cost_matrix(q, it)?.normalize_by(IMAGE_SPACE_DIAMETER)?;
                            used.evaluate(q, it, &cm)
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    let order = rank(&dists, &ids);
                    let mut correct = 0;
                    Ok(order[..m_max]
                        .iter()
                        .map(|&i| {
                            correct += usize::from(corpus.items[i].label == query.label);
                            correct
                        })
                        .collect())
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for m in 1..=m_max {
            let total: f64 = hits.iter().map(|h| h[m - 1] as f64 / m as f64).sum();
            rows.push(RetrievalRow {
                metric: metric.to_string(),
                scenario: scenario.to_string(),
                m,
                accuracy: total / hits.len() as f64,
            });
        }
    }
    Ok(RetrievalReport { rows })
}

/// `W_1`, `W_2`, `TV`, `RPW(2,1)` and `RPW(2,0.1)`.
pub fn standard_metrics() -> Vec<Metric> {
    let p2 = Exponent::Finite(2.0);
    vec![
        Metric::Wasserstein { p: Exponent::Finite(1.0) },
        Metric::Wasserstein { p: p2 },
        Metric::TotalVariation,
        Metric::Rpw { p: p2, k: 1.0 },
        Metric::Rpw { p: p2, k: 0.1 },
    ]
}
