//! Orchard's algorithm.
//!
//! Each point keeps every other point in a list sorted by distance to it.
//! A query starts from some candidate `S_i` at distance `r`, then walks the
//! list of `S_i`: any list entry at distance `>= 2r` from `S_i` is at least
//! `r` from the query by the triangle inequality, so the walk (and the
//! search) stops there. When a closer candidate turns up the walk restarts at
//! the head of that candidate's list.
//!
//! The table costs `N(N-1)/2` distance evaluations and `N(N-1)` entries.

use rand::Rng;

use crate::error::{Error, Result};
use crate::metric::{Counted, Dataset, Metric};
use crate::oracle::QueryResult;

/// Tile edge used when filling the pairwise table.
const TILE: usize = 64;

/// Precomputed sorted-neighbor table.
#[derive(Debug, Clone)]
pub struct OrchardIndex<'d> {
    dataset: &'d Dataset,
    /// Row `i` occupies `[i * (n-1), (i+1) * (n-1))`.
    neighbors: Vec<u32>,
    distances: Vec<f64>,
    build_evals: u64,
}

impl<'d> OrchardIndex<'d> {
    /// Build the table for `dataset`, which must hold at least two points.
    pub fn build<M: Metric + ?Sized>(dataset: &'d Dataset, metric: &M) -> Result<Self> {
        let n = dataset.len();
        if n < 2 {
            return Err(Error::TooFewPoints {
                what: "orchard index",
                needed: 2,
                found: n,
            });
        }
        if n > u32::MAX as usize {
            return Err(Error::invalid(format!("orchard index supports at most {} points", u32::MAX)));
        }
        let width = n - 1;
        let mut distances = vec![0.0f64; n * width];
        let mut evals = 0u64;

        // Unsorted layout first: in row i, point j lives at column j - (j > i).
        for bi in (0..n).step_by(TILE) {
            for bj in (bi..n).step_by(TILE) {
                for i in bi..(bi + TILE).min(n) {
                    let pi = dataset.point(i);
                    for j in bj.max(i + 1)..(bj + TILE).min(n) {
                        let d = metric.distance(pi, dataset.point(j));
                        distances[i * width + j - 1] = d;
                        distances[j * width + i] = d;
                        evals += 1;
                    }
                }
            }
        }

        let mut neighbors = vec![0u32; n * width];
        let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(width);
        for i in 0..n {
            let row = i * width..(i + 1) * width;
            scratch.clear();
            scratch.extend(distances[row.clone()].iter().enumerate().map(|(c, &d)| {
                let j = if c < i { c } else { c + 1 };
                (d, j as u32)
            }));
            scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (slot, &(d, j)) in row.zip(scratch.iter()) {
                distances[slot] = d;
                neighbors[slot] = j;
            }
        }

        Ok(Self {
            dataset,
            neighbors,
            distances,
            build_evals: evals,
        })
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn dataset(&self) -> &'d Dataset {
        self.dataset
    }

    /// Distance evaluations spent building the table.
    pub fn build_evals(&self) -> u64 {
        self.build_evals
    }

    fn width(&self) -> usize {
        self.len() - 1
    }

    /// Row `i`: every other point with its distance to `S_i`, nearest first.
    pub fn row(&self, i: usize) -> impl ExactSizeIterator<Item = (usize, f64)> + '_ {
        let range = i * self.width()..(i + 1) * self.width();
        self.neighbors[range.clone()]
            .iter()
            .zip(&self.distances[range])
            .map(|(&j, &d)| (j as usize, d))
    }

    fn row_slices(&self, i: usize) -> (&[u32], &[f64]) {
        let range = i * self.width()..(i + 1) * self.width();
        (&self.neighbors[range.clone()], &self.distances[range])
    }

    /// A reusable query context.
    pub fn searcher(&self) -> Searcher<'_, 'd> {
        Searcher {
            index: self,
            state: SearchState::new(self.len()),
        }
    }

    /// One-off query starting from point `start`.
    pub fn search<M: Metric + ?Sized>(&self, q: &[f64], metric: &M, start: usize) -> Result<QueryResult> {
        self.searcher().search(q, metric, start)
    }

    /// Uniformly random start candidate.
    pub fn random_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(0..self.len())
    }
}

/// Per-query walk state: current candidate, its distance, and the set of
/// points whose distance to the query has been evaluated.
///
/// The visited set is a stamped array, so starting a new query is O(1).
#[derive(Debug, Clone)]
pub struct SearchState {
    current: usize,
    radius: f64,
    stamps: Vec<u32>,
    stamp: u32,
}

impl SearchState {
    pub fn new(n: usize) -> Self {
        Self {
            current: 0,
            radius: f64::INFINITY,
            stamps: vec![0; n],
            stamp: 0,
        }
    }

    fn begin(&mut self) {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.stamps.fill(0);
            self.stamp = 1;
        }
        self.radius = f64::INFINITY;
    }

    #[inline]
    fn visit(&mut self, j: usize) -> bool {
        let fresh = self.stamps[j] != self.stamp;
        self.stamps[j] = self.stamp;
        fresh
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn is_visited(&self, j: usize) -> bool {
        self.stamps[j] == self.stamp
    }
}

/// Hooks into the walk, used by tests and audits.
pub trait OrchardObserver {
    /// A new best candidate was accepted.
    fn accepted(&mut self, _index: usize, _distance: f64) {}
    /// The walk of `row` ended at `offset` with best distance `radius`.
    /// Entries of the row from `offset` on were never looked at.
    fn stopped(&mut self, _row: usize, _offset: usize, _radius: f64) {}
}

impl OrchardObserver for () {}

/// Records the walk for inspection.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct OrchardTrace {
    pub accepted: Vec<(usize, f64)>,
    pub stop: Option<(usize, usize, f64)>,
}

impl OrchardObserver for OrchardTrace {
    fn accepted(&mut self, index: usize, distance: f64) {
        self.accepted.push((index, distance));
    }

    fn stopped(&mut self, row: usize, offset: usize, radius: f64) {
        self.stop = Some((row, offset, radius));
    }
}

/// Query context bound to one index; reuse it across queries.
#[derive(Debug, Clone)]
pub struct Searcher<'i, 'd> {
    index: &'i OrchardIndex<'d>,
    state: SearchState,
}

impl<'i, 'd> Searcher<'i, 'd> {
    pub fn state(&self) -> &SearchState {
        &self.state
    }

    pub fn search<M: Metric + ?Sized>(&mut self, q: &[f64], metric: &M, start: usize) -> Result<QueryResult> {
        self.search_observed(q, metric, start, &mut ())
    }

    pub fn search_traced<M: Metric + ?Sized>(
        &mut self,
        q: &[f64],
        metric: &M,
        start: usize,
    ) -> Result<(QueryResult, OrchardTrace)> {
        let mut trace = OrchardTrace::default();
        let r = self.search_observed(q, metric, start, &mut trace)?;
        Ok((r, trace))
    }

    pub fn search_observed<M: Metric + ?Sized, O: OrchardObserver>(
        &mut self,
        q: &[f64],
        metric: &M,
        start: usize,
        observer: &mut O,
    ) -> Result<QueryResult> {
        let index = self.index;
        let dataset = index.dataset;
        dataset.check_query(q)?;
        if start >= dataset.len() {
            return Err(Error::invalid(format!(
                "start candidate {start} out of range for {} points",
                dataset.len()
            )));
        }
        let mut counted = Counted::new(metric);
        let state = &mut self.state;
        state.begin();
        state.visit(start);
        state.current = start;
        state.radius = counted.distance(q, dataset.point(start));
        observer.accepted(start, state.radius);

        'walk: loop {
            let (neighbors, distances) = index.row_slices(state.current);
            let bound = 2.0 * state.radius;
            for (offset, (&j, &dij)) in neighbors.iter().zip(distances).enumerate() {
                if dij >= bound {
                    observer.stopped(state.current, offset, state.radius);
                    break 'walk;
                }
                let j = j as usize;
                if !state.visit(j) {
                    continue;
                }
                let dq = counted.distance(q, dataset.point(j));
                if dq < state.radius {
                    state.current = j;
                    state.radius = dq;
                    observer.accepted(j, dq);
                    continue 'walk;
                }
            }
            observer.stopped(state.current, neighbors.len(), state.radius);
            break;
        }

        Ok(QueryResult {
            index: state.current,
            distance: state.radius,
            evals: counted.evaluations(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{gaussian_dataset, gaussian_queries, simplex_dataset, simplex_query, Euclidean};
    use crate::oracle::brute_force_nn;
    use crate::rng;

    #[test]
    fn collinear_rows() {
        let ds = Dataset::from_points(&[[0.0], [1.0], [5.0]]).unwrap();
        let idx = OrchardIndex::build(&ds, &Euclidean).unwrap();
        assert_eq!(idx.row(0).collect::<Vec<_>>(), vec![(1, 1.0), (2, 5.0)]);
        assert_eq!(idx.row(1).collect::<Vec<_>>(), vec![(0, 1.0), (2, 4.0)]);
        assert_eq!(idx.row(2).collect::<Vec<_>>(), vec![(1, 4.0), (0, 5.0)]);
        assert_eq!(idx.build_evals(), 3);
    }

    #[test]
    fn simplex_rows_tie_by_index() {
        let ds = simplex_dataset(4).unwrap();
        let idx = OrchardIndex::build(&ds, &Euclidean).unwrap();
        for i in 0..4 {
            let row: Vec<_> = idx.row(i).collect();
            let want: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            assert_eq!(row.iter().map(|e| e.0).collect::<Vec<_>>(), want);
            assert!(row.iter().all(|e| e.1 == 2f64.sqrt()));
        }
    }

    #[test]
    fn rows_match_sorted_full_table() {
        // Spans several tiles so the blocked fill is exercised.
        for (n, d) in [(40, 3), (150, 2)] {
            let ds = gaussian_dataset(n, d, 5).unwrap();
            let idx = OrchardIndex::build(&ds, &Euclidean).unwrap();
            assert_eq!(idx.build_evals(), (n * (n - 1) / 2) as u64);
            for i in 0..n {
                let mut want: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, Euclidean.distance(ds.point(i), ds.point(j))))
                    .collect();
                want.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                let got: Vec<_> = idx.row(i).collect();
                assert_eq!(got.len(), n - 1);
                for (g, w) in got.iter().zip(&want) {
                    assert_eq!(g.0, w.0);
                    assert!((g.1 - w.1).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_single_point() {
        let ds = gaussian_dataset(1, 2, 0).unwrap();
        assert!(matches!(
            OrchardIndex::build(&ds, &Euclidean),
            Err(Error::TooFewPoints { needed: 2, found: 1, .. })
        ));
    }

    #[test]
    fn member_query_finds_itself() {
        let ds = gaussian_dataset(100, 3, 12).unwrap();
        let idx = OrchardIndex::build(&ds, &Euclidean).unwrap();
        let mut s = idx.searcher();
        for k in [0, 17, 99] {
            for start in [0, 50, k] {
                let (r, trace) = s.search_traced(ds.point(k), &Euclidean, start).unwrap();
                assert_eq!((r.index, r.distance), (k, 0.0));
                // r = 0 makes the 2r bound stop at the head of row k.
                assert_eq!(trace.stop, Some((k, 0, 0.0)));
            }
        }
        let r = s.search(ds.point(5), &Euclidean, 5).unwrap();
        assert_eq!(r.evals, 1);
    }

    #[test]
    fn simplex_is_brute_force() {
        let ds = simplex_dataset(6).unwrap();
        let idx = OrchardIndex::build(&ds, &Euclidean).unwrap();
        let q = simplex_query(&ds).unwrap();
        for start in 0..6 {
            let r = idx.search(q.coords(), &Euclidean, start).unwrap();
            assert_eq!(r.evals, 6);
            assert_eq!(r.distance, 1.0);
            assert_eq!(r.index, start);
        }
    }

    #[test]
    fn matches_oracle_on_random_queries() {
        let ds = gaussian_dataset(200, 3, 77).unwrap();
        let idx = OrchardIndex::build(&ds, &Euclidean).unwrap();
        let mut s = idx.searcher();
        let mut starts = rng::stream(77, rng::streams::START);
        for q in gaussian_queries(&ds, 500, 77) {
            let start = idx.random_start(&mut starts);
            let got = s.search(q.coords(), &Euclidean, start).unwrap();
            let want = brute_force_nn(q.coords(), &ds, &Euclidean).unwrap();
            assert_eq!(got.distance, want.distance);
            assert!(got.evals <= 200);
        }
    }

    #[test]
    fn walk_invariants_and_pruning_soundness() {
        let ds = gaussian_dataset(120, 4, 3).unwrap();
        let idx = OrchardIndex::build(&ds, &Euclidean).unwrap();
        let mut s = idx.searcher();
        let mut starts = rng::stream(3, rng::streams::START);
        for q in gaussian_queries(&ds, 200, 3) {
            let start = idx.random_start(&mut starts);
            let (r, trace) = s.search_traced(q.coords(), &Euclidean, start).unwrap();
            for w in trace.accepted.windows(2) {
                assert!(w[1].1 < w[0].1);
            }
            let (row, offset, radius) = trace.stop.unwrap();
            assert_eq!(row, r.index);
            assert_eq!(radius, r.distance);
            // Each point evaluated at most once: visited count equals evals.
            let visited = (0..ds.len()).filter(|&j| s.state().is_visited(j)).count();
            assert_eq!(visited as u64, r.evals);
            for (j, dij) in idx.row(row).skip(offset) {
                assert!(dij >= 2.0 * radius);
                assert!(Euclidean.distance(q.coords(), ds.point(j)) >= radius);
            }
        }
    }

    #[test]
    fn stamp_wraparound_resets_visited() {
        let mut st = SearchState::new(3);
        st.stamp = u32::MAX;
        st.stamps = vec![u32::MAX, 0, 5];
        st.begin();
        assert_eq!(st.stamp, 1);
        assert!(!st.is_visited(0) && !st.is_visited(1) && !st.is_visited(2));
    }

    #[test]
    fn search_rejects_bad_input() {
        let ds = gaussian_dataset(10, 2, 0).unwrap();
        let idx = OrchardIndex::build(&ds, &Euclidean).unwrap();
        assert!(matches!(
            idx.search(&[0.0], &Euclidean, 0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(idx.search(&[0.0, 0.0], &Euclidean, 10).is_err());
    }
}
