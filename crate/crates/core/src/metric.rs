//! Points, datasets and the metric interface.
//!
//! A [`Dataset`] stores its points row-major in one flat buffer; rows are
//! handed out as `&[f64]` slices. Distances go through the [`Metric`] trait,
//! and every search routes its query-time evaluations through a
//! [`Counted`] wrapper so the number of evaluations is exact.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::rng::{self, BoxMuller};

/// A distance function obeying the metric axioms.
pub trait Metric {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64;
}

impl<M: Metric + ?Sized> Metric for &M {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (**self).distance(a, b)
    }
}

/// The Euclidean (L2) metric.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Euclidean;

impl Metric for Euclidean {
    #[inline]
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let t = x - y;
                t * t
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Checked Euclidean distance between two coordinate slices.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(Euclidean.distance(a, b))
}

/// Number of metric evaluations performed through a [`Counted`] metric.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DistanceCounter {
    evaluations: u64,
}

impl DistanceCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn record(&mut self) {
        self.evaluations += 1;
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn reset(&mut self) {
        self.evaluations = 0;
    }
}

/// A metric with an attached evaluation counter.
///
/// The counter is single-writer: hold one `Counted` per query.
#[derive(Debug)]
pub struct Counted<'m, M: ?Sized> {
    metric: &'m M,
    counter: DistanceCounter,
}

impl<'m, M: Metric + ?Sized> Counted<'m, M> {
    pub fn new(metric: &'m M) -> Self {
        Self {
            metric,
            counter: DistanceCounter::new(),
        }
    }

    #[inline]
    pub fn distance(&mut self, a: &[f64], b: &[f64]) -> f64 {
        self.counter.record();
        self.metric.distance(a, b)
    }

    pub fn evaluations(&self) -> u64 {
        self.counter.evaluations()
    }

    pub fn counter(&self) -> DistanceCounter {
        self.counter
    }

    pub fn reset(&mut self) {
        self.counter.reset();
    }
}

/// A point with finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords)?;
        Ok(Self { coords })
    }

    /// The origin of dimension `dim`.
    pub fn origin(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.coords
    }
}

fn check_finite(coords: &[f64]) -> Result<()> {
    match coords.iter().position(|c| !c.is_finite()) {
        Some(position) => Err(Error::NonFinite { position }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Gaussian,
    Simplex,
    Custom,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Gaussian => "gaussian",
            DatasetKind::Simplex => "simplex",
            DatasetKind::Custom => "custom",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An immutable set of `n` points of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    coords: Vec<f64>,
    n: usize,
    dim: usize,
    seed: u64,
    kind: DatasetKind,
}

impl Dataset {
    /// Build a custom dataset from explicit points.
    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let first = points.first().ok_or(Error::TooFewPoints {
            what: "dataset",
            needed: 1,
            found: 0,
        })?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(Error::invalid("points must have dimension >= 1"));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            check_finite(p)?;
            coords.extend_from_slice(p);
        }
        Ok(Self {
            coords,
            n: points.len(),
            dim,
            seed: 0,
            kind: DatasetKind::Custom,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Reject a query whose dimension differs from the dataset's.
    pub fn check_query(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        check_finite(q)
    }
}

fn row_key(row: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 are the same point.
    row.iter().map(|c| (c + 0.0).to_bits()).collect()
}

/// `n` points with independent standard normal coordinates.
///
/// Coordinates come from the dataset stream of `seed`; a row that repeats an
/// earlier row is redrawn, so the points are always distinct.
pub fn gaussian_dataset(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::TooFewPoints {
            what: "gaussian dataset",
            needed: 1,
            found: 0,
        });
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be >= 1"));
    }
    let mut rng = rng::stream(seed, rng::streams::DATASET);
    let mut normal = BoxMuller::new();
    let mut coords = Vec::with_capacity(n * dim);
    let mut seen = HashSet::with_capacity(n);
    let mut row = vec![0.0; dim];
    while coords.len() < n * dim {
        row.iter_mut().for_each(|c| *c = normal.sample(&mut rng));
        if seen.insert(row_key(&row)) {
            coords.extend_from_slice(&row);
        }
    }
    Ok(Dataset {
        coords,
        n,
        dim,
        seed,
        kind: DatasetKind::Gaussian,
    })
}

/// `count` standard normal query points drawn from the query stream of
/// `seed`, none of which coincides with a point of `dataset`.
pub fn gaussian_queries(dataset: &Dataset, count: usize, seed: u64) -> Vec<Point> {
    let members: HashSet<Vec<u64>> = dataset.points().map(row_key).collect();
    let mut rng = rng::stream(seed, rng::streams::QUERIES);
    let mut normal = BoxMuller::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let coords: Vec<f64> = (0..dataset.dim()).map(|_| normal.sample(&mut rng)).collect();
        if !members.contains(&row_key(&coords)) {
            out.push(Point { coords });
        }
    }
    out
}

/// The `n` standard basis vectors of dimension `n`; every pair is `√2` apart.
pub fn simplex_dataset(n: usize) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::TooFewPoints {
            what: "simplex dataset",
            needed: 2,
            found: n,
        });
    }
    let mut coords = vec![0.0; n * n];
    for i in 0..n {
        coords[i * n + i] = 1.0;
    }
    Ok(Dataset {
        coords,
        n,
        dim: n,
        seed: 0,
        kind: DatasetKind::Simplex,
    })
}

/// A query at unit distance from every point of a simplex dataset.
pub fn simplex_query(dataset: &Dataset) -> Result<Point> {
    if dataset.kind() != DatasetKind::Simplex {
        return Err(Error::WrongDatasetKind {
            expected: "simplex",
            found: dataset.kind().name(),
        });
    }
    Ok(Point::origin(dataset.dim()))
}
