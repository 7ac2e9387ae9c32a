//! Efficiency benchmark harness.
//!
//! A cell is one `(algorithm, N, D)` combination. For each realization the
//! harness draws a fresh Gaussian dataset and a fresh batch of Gaussian
//! queries, builds the index, and records the mean number of query-time
//! distance evaluations divided by `N`. The cell reports the mean and sample
//! standard deviation of that fraction over realizations.
//!
//! Every random draw is derived from the base seed, so a cell reproduces
//! bit-for-bit regardless of which other cells run or in which order.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::metric::{gaussian_dataset, gaussian_queries, simplex_dataset, simplex_query, Dataset, Metric, Point};
use crate::numfmt::sig;
use crate::oracle::{brute_force_nn, QueryResult};
use crate::orchard::OrchardIndex;
use crate::rng;
use crate::tree::{MetricTree, VpConfig};

/// Dimensions used when a dimension range is requested.
pub const DEFAULT_DIMS: [usize; 9] = [2, 3, 4, 6, 8, 12, 16, 24, 32];
pub const DEFAULT_SIZES: [usize; 3] = [1000, 3000, 9000];
pub const DEFAULT_REALIZATIONS: usize = 10;
pub const DEFAULT_QUERIES: usize = 100;

pub const CSV_HEADER: [&str; 7] = ["algorithm", "n", "d", "realizations", "queries", "mean_f", "std_f"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Linear scan, the `f = 1` reference.
    BruteForce,
    Orchard,
    Ball,
    Vp,
}

impl Algorithm {
    pub const INDEXES: [Algorithm; 3] = [Algorithm::Orchard, Algorithm::Ball, Algorithm::Vp];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::BruteForce => "brute",
            Algorithm::Orchard => "orchard",
            Algorithm::Ball => "ball",
            Algorithm::Vp => "vp",
        }
    }

    fn seed_code(self) -> u64 {
        match self {
            Algorithm::BruteForce => 0,
            Algorithm::Orchard => 1,
            Algorithm::Ball => 2,
            Algorithm::Vp => 3,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "brute" | "brute-force" => Ok(Algorithm::BruteForce),
            "orchard" => Ok(Algorithm::Orchard),
            "ball" | "balltree" => Ok(Algorithm::Ball),
            "vp" | "vptree" => Ok(Algorithm::Vp),
            other => Err(format!(
                "unknown algorithm `{other}` (expected orchard, ball, vp or brute)"
            )),
        }
    }
}

/// Point distribution of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Standard normal data and queries.
    Gaussian,
    /// Basis vectors queried at the origin; `d` is forced to `n`.
    Simplex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub algorithm: Algorithm,
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub realizations: usize,
    pub queries: usize,
    pub base_seed: u64,
    pub vp_config: VpConfig,
}

impl CellSpec {
    pub fn gaussian(algorithm: Algorithm, n: usize, d: usize, realizations: usize, queries: usize, base_seed: u64) -> Self {
        Self {
            algorithm,
            family: Family::Gaussian,
            n,
            d,
            realizations,
            queries,
            base_seed,
            vp_config: VpConfig::default(),
        }
    }

    pub fn simplex(algorithm: Algorithm, n: usize, queries: usize, base_seed: u64) -> Self {
        Self {
            family: Family::Simplex,
            ..Self::gaussian(algorithm, n, n, 1, queries, base_seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.realizations == 0 || self.queries == 0 {
            return Err(Error::invalid(format!(
                "cell sizes must be positive: n={} d={} realizations={} queries={}",
                self.n, self.d, self.realizations, self.queries
            )));
        }
        if self.family == Family::Simplex && self.n < 2 {
            return Err(Error::invalid("simplex cells need n >= 2"));
        }
        self.vp_config.validate()
    }

    fn realization_seed(&self, realization: usize) -> u64 {
        rng::mix(&[
            self.base_seed,
            self.algorithm.seed_code(),
            self.n as u64,
            self.d as u64,
            realization as u64,
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRecord {
    pub algorithm: Algorithm,
    pub n: usize,
    pub d: usize,
    pub realizations: usize,
    /// Queries per realization.
    pub queries: usize,
    /// Mean over realizations of the per-realization mean of `evals / n`.
    pub mean_f: f64,
    /// Sample standard deviation across realizations (0 for one).
    pub std_f: f64,
}

impl EfficiencyRecord {
    pub fn total_queries(&self) -> usize {
        self.realizations * self.queries
    }
}

/// Construction cost of one cell, averaged over realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildStats {
    pub algorithm: Algorithm,
    pub n: usize,
    pub d: usize,
    pub build_evals: u64,
    pub build_ms: f64,
}

enum Prepared<'d> {
    Brute(&'d Dataset),
    Orchard(OrchardIndex<'d>),
    Tree(MetricTree<'d>),
}

impl<'d> Prepared<'d> {
    fn build<M: Metric + ?Sized>(spec: &CellSpec, dataset: &'d Dataset, metric: &M, seed: u64) -> Result<(Self, u64)> {
        Ok(match spec.algorithm {
            Algorithm::BruteForce => (Prepared::Brute(dataset), 0),
            // A one-point set needs no table.
            Algorithm::Orchard if dataset.len() == 1 => (Prepared::Brute(dataset), 0),
            Algorithm::Orchard => {
                let idx = OrchardIndex::build(dataset, metric)?;
                let evals = idx.build_evals();
                (Prepared::Orchard(idx), evals)
            }
            Algorithm::Ball => {
                let t = MetricTree::ball(dataset, metric, seed)?;
                let evals = t.build_evals();
                (Prepared::Tree(t), evals)
            }
            Algorithm::Vp => {
                let t = MetricTree::vp(dataset, metric, &spec.vp_config, seed)?;
                let evals = t.build_evals();
                (Prepared::Tree(t), evals)
            }
        })
    }

    fn run<M: Metric + ?Sized>(&self, queries: &[Point], metric: &M, seed: u64) -> Result<Vec<QueryResult>> {
        match self {
            Prepared::Brute(ds) => queries.iter().map(|q| brute_force_nn(q.coords(), ds, metric)).collect(),
            Prepared::Orchard(idx) => {
                let mut starts = rng::stream(seed, rng::streams::START);
                let mut searcher = idx.searcher();
                queries
                    .iter()
                    .map(|q| {
                        let start = idx.random_start(&mut starts);
                        searcher.search(q.coords(), metric, start)
                    })
                    .collect()
            }
            Prepared::Tree(t) => queries.iter().map(|q| t.nearest(q.coords(), metric)).collect(),
        }
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Measure one cell.
pub fn run_cell<M: Metric + ?Sized>(spec: &CellSpec, metric: &M) -> Result<(EfficiencyRecord, BuildStats)> {
    spec.validate()?;
    let mut fractions = Vec::with_capacity(spec.realizations);
    let mut build_evals = 0u64;
    let mut build_ms = 0.0;
    for realization in 0..spec.realizations {
        let seed = spec.realization_seed(realization);
        let (dataset, queries) = match spec.family {
            Family::Gaussian => {
                let ds = gaussian_dataset(spec.n, spec.d, seed)?;
                let qs = gaussian_queries(&ds, spec.queries, seed);
                (ds, qs)
            }
            Family::Simplex => {
                let ds = simplex_dataset(spec.n)?;
                let q = simplex_query(&ds)?;
                (ds, vec![q; spec.queries])
            }
        };
        let started = Instant::now();
        let (index, evals) = Prepared::build(spec, &dataset, metric, seed)?;
        build_ms += started.elapsed().as_secs_f64() * 1e3;
        build_evals += evals;

        let results = index.run(&queries, metric, seed)?;
        let total: u64 = results.iter().map(|r| r.evals).sum();
        fractions.push(total as f64 / (results.len() as f64 * spec.n as f64));
    }
    let (mean_f, std_f) = mean_and_std(&fractions);
    let reps = spec.realizations as f64;
    Ok((
        EfficiencyRecord {
            algorithm: spec.algorithm,
            n: spec.n,
            d: spec.d,
            realizations: spec.realizations,
            queries: spec.queries,
            mean_f,
            std_f,
        },
        BuildStats {
            algorithm: spec.algorithm,
            n: spec.n,
            d: spec.d,
            build_evals: (build_evals as f64 / reps).round() as u64,
            build_ms: build_ms / reps,
        },
    ))
}

/// A full `algorithms x n_values x d_values` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub n_values: Vec<usize>,
    pub d_values: Vec<usize>,
    pub realizations: usize,
    pub queries_per_realization: usize,
    pub base_seed: u64,
    pub vp_config: VpConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::INDEXES.to_vec(),
            n_values: DEFAULT_SIZES.to_vec(),
            d_values: DEFAULT_DIMS.to_vec(),
            realizations: DEFAULT_REALIZATIONS,
            queries_per_realization: DEFAULT_QUERIES,
            base_seed: 1,
            vp_config: VpConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.n_values.is_empty() || self.d_values.is_empty() {
            return Err(Error::invalid("algorithm, n and d lists must be non-empty"));
        }
        if self.realizations == 0 || self.queries_per_realization == 0 {
            return Err(Error::invalid("realizations and queries must be >= 1"));
        }
        if self.n_values.contains(&0) || self.d_values.contains(&0) {
            return Err(Error::invalid("n and d values must be >= 1"));
        }
        self.vp_config.validate()
    }

    /// Cells in output order: algorithm-major, then n, then d.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &algorithm in &self.algorithms {
            for &n in &self.n_values {
                for &d in &self.d_values {
                    out.push(CellSpec {
                        vp_config: self.vp_config,
                        ..CellSpec::gaussian(
                            algorithm,
                            n,
                            d,
                            self.realizations,
                            self.queries_per_realization,
                            self.base_seed,
                        )
                    });
                }
            }
        }
        out
    }
}

/// Run every cell. Cells execute on the current rayon pool; results come
/// back in [`ExperimentConfig::cells`] order. `on_cell` sees each record as
/// it finishes.
pub fn run_grid<M, F>(config: &ExperimentConfig, metric: &M, on_cell: F) -> Result<(Vec<EfficiencyRecord>, Vec<BuildStats>)>
where
    M: Metric + Sync + ?Sized,
    F: Fn(&EfficiencyRecord) + Sync,
{
    config.validate()?;
    let results: Vec<Result<(EfficiencyRecord, BuildStats)>> = config
        .cells()
        .par_iter()
        .map(|cell| {
            let out = run_cell(cell, metric).map_err(|e| {
                Error::invalid(format!(
                    "cell algorithm={} n={} d={} failed: {e}",
                    cell.algorithm, cell.n, cell.d
                ))
            })?;
            on_cell(&out.0);
            Ok(out)
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut builds = Vec::with_capacity(results.len());
    for r in results {
        let (rec, b) = r?;
        records.push(rec);
        builds.push(b);
    }
    Ok((records, builds))
}

/// Coefficient of variation of all pairwise distances among `n` Gaussian
/// points, for each dimension in `d_values`.
pub fn concentration_probe<M: Metric + ?Sized>(
    n: usize,
    d_values: &[usize],
    seed: u64,
    metric: &M,
) -> Result<Vec<(usize, f64)>> {
    if n < 3 {
        return Err(Error::TooFewPoints {
            what: "concentration probe (at least two pairs)",
            needed: 3,
            found: n,
        });
    }
    d_values
        .iter()
        .map(|&d| {
            let ds = gaussian_dataset(n, d, rng::mix(&[seed, d as u64]))?;
            let (mut sum, mut sum_sq, mut count) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in i + 1..n {
                    let x = metric.distance(ds.point(i), ds.point(j));
                    sum += x;
                    sum_sq += x * x;
                    count += 1.0;
                }
            }
            let mean = sum / count;
            let var = (sum_sq / count - mean * mean).max(0.0);
            Ok((d, var.sqrt() / mean))
        })
        .collect()
}

/// Write records as CSV (LF line endings, six significant digits).
pub fn write_records<W: Write>(records: &[EfficiencyRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.algorithm.name().to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.realizations.to_string(),
            r.queries.to_string(),
            sig(r.mean_f, 6),
            sig(r.std_f, 6),
        ])?;
    }
    w.flush()
}

pub fn records_to_string(records: &[EfficiencyRecord]) -> String {
    let mut buf = Vec::new();
    write_records(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is ASCII")
}

pub fn export_records(records: &[EfficiencyRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to export"));
    }
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    write_records(records, std::io::BufWriter::new(file)).map_err(io)
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    algorithm: String,
    n: usize,
    d: usize,
    realizations: usize,
    queries: usize,
    mean_f: f64,
    std_f: f64,
}

/// Parse the CSV written by [`write_records`]. `origin` names the source in
/// error messages.
pub fn parse_records<R: Read>(input: R, origin: &str) -> Result<Vec<EfficiencyRecord>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        origin: origin.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!("expected header `{}`", CSV_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = out.len() as u64 + 2;
        let algorithm = row.algorithm.parse().map_err(|m| parse_err(line, m))?;
        if !(row.mean_f.is_finite() && row.std_f.is_finite()) {
            return Err(parse_err(line, "non-finite statistic".into()));
        }
        out.push(EfficiencyRecord {
            algorithm,
            n: row.n,
            d: row.d,
            realizations: row.realizations,
            queries: row.queries,
            mean_f: row.mean_f,
            std_f: row.std_f,
        });
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<EfficiencyRecord>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_records(std::io::BufReader::new(file), &path.display().to_string())
}

/// Build log lines: `algorithm n d build_evals build_ms`.
pub fn write_build_log<W: Write>(stats: &[BuildStats], mut out: W) -> std::io::Result<()> {
    for s in stats {
        writeln!(out, "{} {} {} {} {:.3}", s.algorithm, s.n, s.d, s.build_evals, s.build_ms)?;
    }
    out.flush()
}
