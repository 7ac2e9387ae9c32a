//! Randomized equivalence suite: every index against the brute-force
//! oracle, plus structural audits and the equidistant worst case.

use std::fmt;

use rand::Rng;

use crate::error::Result;
use crate::metric::{gaussian_dataset, gaussian_queries, simplex_dataset, simplex_query, Dataset, Metric};
use crate::oracle::{brute_force_nn, QueryResult};
use crate::orchard::OrchardIndex;
use crate::rng;
use crate::tree::{MetricTree, SearchOptions, VpConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub instances: usize,
    pub seed: u64,
    pub queries_per_instance: usize,
    pub n_range: (usize, usize),
    pub d_range: (usize, usize),
    pub simplex_sizes: Vec<usize>,
    pub vp_config: VpConfig,
    /// Run the tree searches with a deliberately broken pruning rule.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: 100,
            seed: 1,
            queries_per_instance: 5,
            n_range: (2, 200),
            d_range: (1, 8),
            simplex_sizes: vec![10, 50, 200],
            vp_config: VpConfig::default(),
            inject_fault: false,
        }
    }
}

/// Replay coordinates of a failed check.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub check: &'static str,
    /// Seed of the instance (dataset, queries and builds derive from it).
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub query: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FAIL {} seed={} n={} d={}", self.check, self.seed, self.n, self.d)?;
        if let Some(q) = self.query {
            write!(f, " query={q}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckTally {
    pub name: &'static str,
    pub passed: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckTally>,
    pub failures: Vec<Failure>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn tally(&mut self, name: &'static str, ok: bool) {
        let idx = match self.checks.iter().position(|c| c.name == name) {
            Some(i) => i,
            None => {
                self.checks.push(CheckTally {
                    name,
                    passed: 0,
                    failed: 0,
                });
                self.checks.len() - 1
            }
        };
        if ok {
            self.checks[idx].passed += 1;
        } else {
            self.checks[idx].failed += 1;
        }
    }

    fn record(&mut self, name: &'static str, failure: Option<Failure>) {
        self.tally(name, failure.is_none());
        self.failures.extend(failure);
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>8} {:>8}  status", "check", "passed", "failed")?;
        for c in &self.checks {
            let status = if c.failed == 0 { "PASS" } else { "FAIL" };
            writeln!(f, "{:<20} {:>8} {:>8}  {status}", c.name, c.passed, c.failed)?;
        }
        for failure in self.failures.iter().take(20) {
            writeln!(f, "{failure}")?;
        }
        if self.failures.len() > 20 {
            writeln!(f, "... {} more failures", self.failures.len() - 20)?;
        }
        write!(f, "{}", if self.passed() { "verify: PASS" } else { "verify: FAIL" })
    }
}

struct Instance<'a> {
    seed: u64,
    dataset: &'a Dataset,
}

impl Instance<'_> {
    fn failure(&self, check: &'static str, query: Option<usize>, detail: String) -> Failure {
        Failure {
            check,
            seed: self.seed,
            n: self.dataset.len(),
            d: self.dataset.dim(),
            query,
            detail,
        }
    }

    fn compare(&self, check: &'static str, q: usize, got: &QueryResult, want: &QueryResult) -> Option<Failure> {
        (got.distance != want.distance).then(|| {
            self.failure(
                check,
                Some(q),
                format!(
                    "distance {} (index {}) but oracle has {} (index {})",
                    got.distance, got.index, want.distance, want.index
                ),
            )
        })
    }

    fn bound(&self, check: &'static str, q: usize, got: &QueryResult) -> Option<Failure> {
        (got.evals > self.dataset.len() as u64).then(|| {
            self.failure(check, Some(q), format!("{} evaluations for {} points", got.evals, self.dataset.len()))
        })
    }
}

fn orchard_table_ok(idx: &OrchardIndex<'_>) -> std::result::Result<(), String> {
    let n = idx.len();
    let mut seen = vec![usize::MAX; n];
    for i in 0..n {
        let mut prev = f64::NEG_INFINITY;
        for (j, d) in idx.row(i) {
            if j == i || j >= n || seen[j] == i {
                return Err(format!("row {i} has bad or repeated entry {j}"));
            }
            seen[j] = i;
            if d < prev {
                return Err(format!("row {i} not sorted at entry {j}"));
            }
            prev = d;
        }
    }
    Ok(())
}

pub fn run<M: Metric + ?Sized>(opts: &VerifyOptions, metric: &M) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let search = SearchOptions {
        invert_right_prune: opts.inject_fault,
        ..Default::default()
    };

    for k in 0..opts.instances {
        let seed = rng::mix(&[opts.seed, k as u64]);
        let mut shape = rng::stream(seed, rng::streams::SHAPE);
        let n = shape.gen_range(opts.n_range.0..=opts.n_range.1);
        let d = shape.gen_range(opts.d_range.0..=opts.d_range.1);
        let dataset = gaussian_dataset(n, d, seed)?;
        let inst = Instance {
            seed,
            dataset: &dataset,
        };
        let queries = gaussian_queries(&dataset, opts.queries_per_instance, seed);

        let orchard = OrchardIndex::build(&dataset, metric)?;
        let ball = MetricTree::ball(&dataset, metric, seed)?;
        let vp = MetricTree::vp(&dataset, metric, &opts.vp_config, seed)?;

        report.record(
            "orchard-table",
            orchard_table_ok(&orchard).err().map(|m| inst.failure("orchard-table", None, m)),
        );
        report.record(
            "ball-audit",
            ball.audit(metric).err().map(|e| inst.failure("ball-audit", None, e.to_string())),
        );
        report.record(
            "vp-audit",
            vp.audit(metric).err().map(|e| inst.failure("vp-audit", None, e.to_string())),
        );

        let mut starts = rng::stream(seed, rng::streams::START);
        let mut searcher = orchard.searcher();
        for (qi, q) in queries.iter().enumerate() {
            let want = brute_force_nn(q.coords(), &dataset, metric)?;
            let start = orchard.random_start(&mut starts);
            let results = [
                ("orchard-exact", searcher.search(q.coords(), metric, start)?),
                ("ball-exact", ball.nearest_observed(q.coords(), metric, search, &mut ())?),
                ("vp-exact", vp.nearest_observed(q.coords(), metric, search, &mut ())?),
            ];
            for (check, got) in &results {
                report.record(check, inst.compare(check, qi, got, &want));
                report.record("count-bound", inst.bound("count-bound", qi, got));
            }
        }
    }

    for &n in &opts.simplex_sizes {
        let dataset = simplex_dataset(n)?;
        let inst = Instance {
            seed: 0,
            dataset: &dataset,
        };
        let q = simplex_query(&dataset)?;
        let orchard = OrchardIndex::build(&dataset, metric)?;
        let ball = MetricTree::ball(&dataset, metric, n as u64)?;
        let vp = MetricTree::vp(&dataset, metric, &opts.vp_config, n as u64)?;
        let results = [
            orchard.search(q.coords(), metric, 0)?,
            ball.nearest_observed(q.coords(), metric, search, &mut ())?,
            vp.nearest_observed(q.coords(), metric, search, &mut ())?,
        ];
        for (name, got) in ["orchard", "ball", "vp"].iter().zip(&results) {
            let fail = (got.evals != n as u64).then(|| {
                inst.failure(
                    "simplex-worst-case",
                    Some(0),
                    format!("{name} used {} evaluations, expected {n}", got.evals),
                )
            });
            report.record("simplex-worst-case", fail);
        }
    }

    Ok(report)
}
