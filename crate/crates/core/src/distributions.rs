//! Discrete distributions, ground costs and transport plans.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result, MASS_TOLERANCE};

/// Transport exponent `p` in `[1, inf]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if p == f64::INFINITY {
            Ok(Exponent::Infinite)
        } else if p.is_finite() && p >= 1.0 {
            Ok(Exponent::Finite(p))
        } else {
            Err(Error::param("p", format!("must lie in [1, inf], got {p}")))
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Exponent::Infinite)
    }

    pub fn value(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Infinite => f64::INFINITY,
        }
    }

    /// `c^p`; for `p = inf` the raw cost is returned (bottleneck semantics).
    pub fn pow(self, c: f64) -> f64 {
        match self {
            Exponent::Finite(p) if p == 1.0 => c,
            Exponent::Finite(p) if p == 2.0 => c * c,
            Exponent::Finite(p) => c.powf(p),
            Exponent::Infinite => c,
        }
    }

    /// `x^(1/p)`, clamping tiny negative round-off to zero.
    pub fn root(self, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            Exponent::Finite(p) if p == 1.0 => x,
            Exponent::Finite(p) if p == 2.0 => x.sqrt(),
            Exponent::Finite(p) => x.powf(1.0 / p),
            Exponent::Infinite => x,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Exponent::Infinite);
        }
        let p: f64 = s
            .parse()
            .map_err(|_| Error::param("p", format!("cannot parse `{s}`")))?;
        Exponent::new(p)
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(p) => serializer.serialize_f64(*p),
            Exponent::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(p) => Exponent::new(p).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A weighted point set in `R^d` with unit total mass.
///
/// Atoms are stored row-major in a flat coordinate buffer. Duplicate locations are
/// legal and kept as separate atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistribution {
    dim: usize,
    coords: Vec<f64>,
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    /// Builds a distribution from points and non-negative weights, rescaling the
    /// weights to sum to one.
    pub fn from_points(points: &[Vec<f64>], masses: &[f64]) -> Result<Self> {
        if points.len() != masses.len() {
            return Err(Error::LengthMismatch {
                points: points.len(),
                masses: masses.len(),
            });
        }
        if points.is_empty() {
            return Err(Error::EmptySupport);
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::param("points", "dimension must be at least 1"));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::param("points", "coordinates must be finite"));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, masses.to_vec())
    }

    /// Same as [`from_points`](Self::from_points) for a flat row-major coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("points", "dimension must be at least 1"));
        }
        if coords.len() != dim * masses.len() {
            return Err(Error::LengthMismatch {
                points: coords.len() / dim,
                masses: masses.len(),
            });
        }
        for (index, &mass) in masses.iter().enumerate() {
            if !(mass >= 0.0) || !mass.is_finite() {
                return Err(Error::NegativeMass { index, mass });
            }
        }
        let total: f64 = masses.iter().sum();
        if masses.is_empty() || total <= 0.0 {
            return Err(Error::EmptySupport);
        }
        let masses = masses.into_iter().map(|m| m / total).collect();
        Ok(Self { dim, coords, masses })
    }

    /// Uniform mass `1/n` on each of the given points.
    pub fn uniform(points: &[Vec<f64>]) -> Result<Self> {
        let masses = vec![1.0; points.len()];
        Self::from_points(points, &masses)
    }

    /// Intensity-proportional distribution on pixel locations `(row, col) / max(H, W)`.
    /// Zero-intensity pixels are left out of the support.
    pub fn from_image(image: &GrayImage) -> Result<Self> {
        let scale = image.height.max(image.width) as f64;
        let mut coords = Vec::new();
        let mut masses = Vec::new();
        for r in 0..image.height {
            for c in 0..image.width {
                let v = image.get(r, c);
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::NegativeMass {
                        index: r * image.width + c,
                        mass: v,
                    });
                }
                if v > 0.0 {
                    coords.push(r as f64 / scale);
                    coords.push(c as f64 / scale);
                    masses.push(v);
                }
            }
        }
        if masses.is_empty() {
            return Err(Error::EmptySupport);
        }
        Self::from_flat(2, coords, masses)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Merges atoms sitting at bit-identical coordinates. The result is the same measure.
    pub fn aggregated(&self) -> Self {
        let mut merged: BTreeMap<Vec<u64>, (usize, f64)> = BTreeMap::new();
        for (i, (p, &m)) in self.points().zip(&self.masses).enumerate() {
            merged
                .entry(location_key(p))
                .and_modify(|e| e.1 += m)
                .or_insert((i, m));
        }
        let mut atoms: Vec<(usize, f64)> = merged.into_values().collect();
        atoms.sort_unstable_by_key(|a| a.0);
        let mut coords = Vec::with_capacity(atoms.len() * self.dim);
        let mut masses = Vec::with_capacity(atoms.len());
        for (i, m) in atoms {
            coords.extend_from_slice(self.point(i));
            masses.push(m);
        }
        Self {
            dim: self.dim,
            coords,
            masses,
        }
    }

    /// `(1 - delta) * self + delta * other` on the union of both supports.
    pub fn mixture(&self, other: &Self, delta: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::param("delta", format!("must lie in [0, 1], got {delta}")));
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        let masses = self
            .masses
            .iter()
            .map(|m| (1.0 - delta) * m)
            .chain(other.masses.iter().map(|m| delta * m))
            .collect();
        Self::from_flat(self.dim, coords, masses)
    }

    /// Largest pairwise Euclidean distance within the support.
    pub fn support_diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.max(euclidean(self.point(i), self.point(j)));
            }
        }
        best
    }
}

/// Hashable key for exact coordinate equality (`-0.0` and `0.0` coincide).
pub(crate) fn location_key(p: &[f64]) -> Vec<u64> {
    p.iter()
        .map(|&x| if x == 0.0 { 0u64 } else { x.to_bits() })
        .collect()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Grayscale intensity grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param("image", "height and width must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::param(
                "image",
                format!("expected {} pixels, got {}", height * width, pixels.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.pixels[row * self.width + col] = v;
    }

    pub fn max_intensity(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }
}

/// Dense `n x m` ground-distance matrix between the supports of two distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
    diameter: f64,
    scale: f64,
    degenerate: bool,
}

impl CostMatrix {
    /// Wraps an explicit row-major matrix of non-negative costs.
    pub fn from_raw(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptySupport);
        }
        if costs.len() != rows * cols {
            return Err(Error::param(
                "costs",
                format!("expected {} entries, got {}", rows * cols, costs.len()),
            ));
        }
        if costs.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::param("costs", "entries must be finite and non-negative"));
        }
        let diameter = costs.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            rows,
            cols,
            costs,
            diameter,
            scale: 1.0,
            degenerate: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::param("costs", "ragged matrix"));
        }
        Self::from_raw(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.costs[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.costs
    }

    /// Maximum entry of the matrix in its current units.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Factor the original distances were divided by (1 for raw matrices).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Set when normalization met an all-zero matrix.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate || self.diameter == 0.0
    }

    /// Rescales to diameter one. A zero matrix is returned unchanged and flagged degenerate.
    pub fn normalize(&self) -> Self {
        if self.diameter == 0.0 {
            let mut out = self.clone();
            out.degenerate = true;
            return out;
        }
        self.rescaled(self.diameter)
    }

    /// Rescales by a known space diameter, which must dominate every entry.
    pub fn normalize_by(&self, space_diameter: f64) -> Result<Self> {
        if !(space_diameter > 0.0) || !space_diameter.is_finite() {
            return Err(Error::param(
                "space_diameter",
                format!("must be positive, got {space_diameter}"),
            ));
        }
        if self.diameter > space_diameter * (1.0 + 1e-12) {
            return Err(Error::param(
                "space_diameter",
                format!(
                    "{space_diameter} is smaller than the largest cost {}",
                    self.diameter
                ),
            ));
        }
        let mut out = self.rescaled(space_diameter);
        if out.diameter == 0.0 {
            out.degenerate = true;
        }
        Ok(out)
    }

    fn rescaled(&self, by: f64) -> Self {
        let costs: Vec<f64> = self.costs.iter().map(|c| (c / by).min(1.0)).collect();
        let diameter = costs.iter().copied().fold(0.0, f64::max);
        Self {
            rows: self.rows,
            cols: self.cols,
            costs,
            diameter,
            scale: self.scale * by,
            degenerate: self.degenerate,
        }
    }

    /// Entries lie in a space of unit diameter.
    pub fn is_unit(&self) -> bool {
        self.diameter <= 1.0 + MASS_TOLERANCE
    }

    pub(crate) fn require_unit(&self) -> Result<()> {
        if self.is_unit() {
            Ok(())
        } else {
            Err(Error::Unnormalized {
                diameter: self.diameter,
            })
        }
    }

    /// Entrywise `c^p`; raw distances for `p = inf`.
    pub fn powered(&self, p: Exponent) -> Vec<f64> {
        self.costs.iter().map(|&c| p.pow(c)).collect()
    }

    pub fn transposed(&self) -> Self {
        let mut costs = vec![0.0; self.costs.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                costs[j * self.rows + i] = self.costs[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            costs,
            ..*self
        }
    }

    /// Sorted distinct entries.
    pub fn distinct_costs(&self) -> Vec<f64> {
        let mut v = self.costs.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub(crate) fn check_shape(&self, mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<()> {
        if self.rows != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                found: self.rows,
            });
        }
        if self.cols != nu.len() {
            return Err(Error::DimensionMismatch {
                expected: nu.len(),
                found: self.cols,
            });
        }
        Ok(())
    }
}

/// Euclidean ground distances between the supports of `mu` and `nu`.
pub fn cost_matrix(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<CostMatrix> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let mut costs = Vec::with_capacity(mu.len() * nu.len());
    for a in mu.points() {
        for b in nu.points() {
            costs.push(euclidean(a, b));
        }
    }
    CostMatrix::from_raw(mu.len(), nu.len(), costs)
}

/// One edge of a transport plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlanEdge {
    pub source: usize,
    pub target: usize,
    pub mass: f64,
}

/// A sparse sub-coupling between two distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub edges: Vec<PlanEdge>,
    pub transported_mass: f64,
    /// `sum mass * c^p` for finite `p`; largest used edge cost for `p = inf`.
    pub p_cost: f64,
    pub p: Exponent,
}

impl TransportPlan {
    pub(crate) fn from_edges(edges: Vec<PlanEdge>, costs: &CostMatrix, p: Exponent) -> Self {
        let transported_mass = edges.iter().map(|e| e.mass).sum();
        let p_cost = match p {
            Exponent::Finite(_) => edges
                .iter()
                .map(|e| e.mass * p.pow(costs.get(e.source, e.target)))
                .sum(),
            Exponent::Infinite => edges
                .iter()
                .map(|e| costs.get(e.source, e.target))
                .fold(0.0, f64::max),
        };
        Self {
            edges,
            transported_mass,
            p_cost,
            p,
        }
    }

    /// `w_p(plan) = p_cost^(1/p)`.
    pub fn w_p(&self) -> f64 {
        self.p.root(self.p_cost)
    }

    /// Checks the sub-coupling marginal constraints against `mu` and `nu`.
    pub fn check_marginals(&self, mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<()> {
        let mut out = vec![0.0; mu.len()];
        let mut inn = vec![0.0; nu.len()];
        for e in &self.edges {
            if !(e.mass > 0.0) {
                return Err(Error::Solver(format!("non-positive edge mass {}", e.mass)));
            }
            out[e.source] += e.mass;
            inn[e.target] += e.mass;
        }
        for (i, (o, m)) in out.iter().zip(mu.masses()).enumerate() {
            if *o > m + MASS_TOLERANCE {
                return Err(Error::Solver(format!("source {i} ships {o} > {m}")));
            }
        }
        for (j, (o, m)) in inn.iter().zip(nu.masses()).enumerate() {
            if *o > m + MASS_TOLERANCE {
                return Err(Error::Solver(format!("target {j} receives {o} > {m}")));
            }
        }
        if self.transported_mass > 1.0 + MASS_TOLERANCE {
            return Err(Error::Solver(format!(
                "transported mass {} exceeds one",
                self.transported_mass
            )));
        }
        Ok(())
    }
}
