//! Ball trees and vantage-point trees.
//!
//! Both are binary trees with one dataset point per node. A node holding
//! point `s` with radius `mu` splits the remaining points by their distance to
//! `s`: the nearer half (plus the median point) goes left and
//! `mu = max_{l in left} d(l, s)`, the rest goes right with `d(r, s) >= mu`.
//! The left half is never smaller and never larger by more than one.
//!
//! The two kinds differ only in how `s` is chosen: uniformly at random for a
//! ball tree, by [`select_vantage_point`] for a VP tree. Queries are shared.

use std::cmp::Ordering;

use rand::seq::index;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::metric::{Counted, Dataset, Metric};
use crate::oracle::{check_eps, Neighbor, QueryResult};
use crate::rng::{self, StreamRng};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Index of the node's point in the dataset.
    pub point: usize,
    /// Ball radius; zero for a node without a left child.
    pub mu: f64,
    pub left: Option<NodeId>,
    pub right: Option<NodeId>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.left.is_none() && self.right.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    Ball,
    Vp,
}

/// Sampling effort for vantage-point selection. Both values are clamped to
/// the size of the set being split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VpConfig {
    /// Candidate vantage points scored per node.
    pub num_candidates: usize,
    /// Points used to estimate each candidate's spread.
    pub subsample_size: usize,
}

impl Default for VpConfig {
    fn default() -> Self {
        Self {
            num_candidates: 15,
            subsample_size: 30,
        }
    }
}

impl VpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_candidates == 0 || self.subsample_size == 0 {
            return Err(Error::invalid(format!(
                "vp config values must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Indices `0..len` if `k >= len`, otherwise `k` distinct indices drawn
/// uniformly. Consumes no randomness in the first case.
fn sample_positions(rng: &mut StreamRng, len: usize, k: usize) -> Vec<usize> {
    if k >= len {
        (0..len).collect()
    } else {
        index::sample(rng, len, k).into_vec()
    }
}

/// Lower median: the element of rank `ceil(m/2)` among `m` values.
fn lower_median(values: &mut [f64]) -> f64 {
    let k = values.len().div_ceil(2) - 1;
    *values.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Position within `items` of the best-scoring candidate, and its median
/// distance estimate.
fn select_position<M: Metric + ?Sized>(
    items: &[usize],
    dataset: &Dataset,
    metric: &mut Counted<'_, M>,
    cfg: &VpConfig,
    rng: &mut StreamRng,
) -> (usize, f64) {
    let len = items.len();
    if len == 1 {
        return (0, 0.0);
    }
    let candidates = sample_positions(rng, len, cfg.num_candidates);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut dists = Vec::new();
    let mut sorted = Vec::new();
    for &cp in &candidates {
        let v = dataset.point(items[cp]);
        dists.clear();
        for sp in sample_positions(rng, len - 1, cfg.subsample_size) {
            let p = if sp >= cp { sp + 1 } else { sp };
            dists.push(metric.distance(dataset.point(items[p]), v));
        }
        sorted.clear();
        sorted.extend_from_slice(&dists);
        let mu = lower_median(&mut sorted);
        let score = dists.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / dists.len() as f64;
        let better = match best {
            None => true,
            Some((bp, bs, _)) => match score.total_cmp(&bs) {
                Ordering::Greater => true,
                Ordering::Equal => items[cp] < items[bp],
                Ordering::Less => false,
            },
        };
        if better {
            best = Some((cp, score, mu));
        }
    }
    let (pos, _, mu) = best.expect("at least one candidate");
    (pos, mu)
}

/// Choose a vantage point from `remaining`.
///
/// Scores up to `cfg.num_candidates` random candidates `v` by the mean of
/// `(d(p, v) - mu(v))^2` over up to `cfg.subsample_size` random other points
/// `p`, where `mu(v)` is the lower median of those distances. Returns the
/// winning dataset index (ties go to the smaller index) and its `mu(v)`.
pub fn select_vantage_point<M: Metric + ?Sized>(
    remaining: &[usize],
    dataset: &Dataset,
    metric: &M,
    cfg: &VpConfig,
    rng: &mut StreamRng,
) -> Result<(usize, f64)> {
    if remaining.is_empty() {
        return Err(Error::TooFewPoints {
            what: "vantage point candidate set",
            needed: 1,
            found: 0,
        });
    }
    cfg.validate()?;
    if let Some(&bad) = remaining.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::invalid(format!("point index {bad} out of range")));
    }
    let mut counted = Counted::new(metric);
    let (pos, mu) = select_position(remaining, dataset, &mut counted, cfg, rng);
    Ok((remaining[pos], mu))
}

enum Pivot {
    Random,
    Vantage(VpConfig),
}

struct Builder<'a, 'm, M: ?Sized> {
    dataset: &'a Dataset,
    metric: Counted<'m, M>,
    rng: StreamRng,
    pivot: Pivot,
    nodes: Vec<TreeNode>,
    scratch: Vec<(f64, usize)>,
}

impl<M: Metric + ?Sized> Builder<'_, '_, M> {
    fn build(&mut self, items: &mut [usize]) -> NodeId {
        let pos = match &self.pivot {
            Pivot::Random => sample_positions(&mut self.rng, items.len(), 1)[0],
            Pivot::Vantage(cfg) => {
                select_position(items, self.dataset, &mut self.metric, cfg, &mut self.rng).0
            }
        };
        items.swap(0, pos);
        let (head, rest) = items.split_first_mut().expect("non-empty split");
        let s = self.dataset.point(*head);

        self.scratch.clear();
        for &p in rest.iter() {
            let d = self.metric.distance(self.dataset.point(p), s);
            self.scratch.push((d, p));
        }
        self.scratch
            .sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (slot, &(_, p)) in rest.iter_mut().zip(&self.scratch) {
            *slot = p;
        }
        let n_left = rest.len().div_ceil(2);
        let mu = if n_left > 0 { self.scratch[n_left - 1].0 } else { 0.0 };

        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            point: *head,
            mu,
            left: None,
            right: None,
        });
        let (left, right) = rest.split_at_mut(n_left);
        if !left.is_empty() {
            let child = self.build(left);
            self.nodes[id].left = Some(child);
        }
        if !right.is_empty() {
            let child = self.build(right);
            self.nodes[id].right = Some(child);
        }
        id
    }
}

/// Query tuning. The default is the exact search with near-side-first order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    /// Descend first into the child whose ball side the query falls on.
    pub near_side_first: bool,
    /// Fault injection for harness self-tests: reverses the right-child
    /// pruning comparison, which makes the search inexact.
    #[doc(hidden)]
    pub invert_right_prune: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            near_side_first: true,
            invert_right_prune: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Hook called whenever a subtree is skipped.
pub trait TreeObserver {
    /// `subtree` was pruned under `node` while the search radius was `eps`
    /// and the query was `query_dist` from the node's point.
    fn pruned(&mut self, _node: NodeId, _subtree: NodeId, _side: Side, _query_dist: f64, _eps: f64) {}
}

impl TreeObserver for () {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneEvent {
    pub node: NodeId,
    pub subtree: NodeId,
    pub side: Side,
    pub query_dist: f64,
    pub eps: f64,
}

impl TreeObserver for Vec<PruneEvent> {
    fn pruned(&mut self, node: NodeId, subtree: NodeId, side: Side, query_dist: f64, eps: f64) {
        self.push(PruneEvent {
            node,
            subtree,
            side,
            query_dist,
            eps,
        });
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("node {node} (point {point}): {message}")]
pub struct AuditError {
    pub node: NodeId,
    pub point: usize,
    pub message: String,
}

/// Ball tree or VP tree over a borrowed dataset.
#[derive(Debug, Clone)]
pub struct MetricTree<'d> {
    dataset: &'d Dataset,
    nodes: Vec<TreeNode>,
    kind: TreeKind,
    build_evals: u64,
}

impl<'d> MetricTree<'d> {
    /// Ball tree: every node point is drawn uniformly from its subset.
    pub fn ball<M: Metric + ?Sized>(dataset: &'d Dataset, metric: &M, seed: u64) -> Result<Self> {
        Self::build(dataset, metric, seed, Pivot::Random, TreeKind::Ball)
    }

    /// VP tree: node points chosen by [`select_vantage_point`].
    pub fn vp<M: Metric + ?Sized>(
        dataset: &'d Dataset,
        metric: &M,
        cfg: &VpConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        Self::build(dataset, metric, seed, Pivot::Vantage(*cfg), TreeKind::Vp)
    }

    fn build<M: Metric + ?Sized>(
        dataset: &'d Dataset,
        metric: &M,
        seed: u64,
        pivot: Pivot,
        kind: TreeKind,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::TooFewPoints {
                what: "metric tree",
                needed: 1,
                found: 0,
            });
        }
        let mut builder = Builder {
            dataset,
            metric: Counted::new(metric),
            rng: rng::stream(seed, rng::streams::BUILD),
            pivot,
            nodes: Vec::with_capacity(dataset.len()),
            scratch: Vec::with_capacity(dataset.len()),
        };
        let mut items: Vec<usize> = (0..dataset.len()).collect();
        builder.build(&mut items);
        Ok(Self {
            dataset,
            build_evals: builder.metric.evaluations(),
            nodes: builder.nodes,
            kind,
        })
    }

    pub fn dataset(&self) -> &'d Dataset {
        self.dataset
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Distance evaluations spent during construction, vantage scoring
    /// included.
    pub fn build_evals(&self) -> u64 {
        self.build_evals
    }

    /// Dataset indices stored in the subtree rooted at `id`.
    pub fn subtree_points(&self, id: NodeId) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            out.push(node.point);
            stack.extend(node.right);
            stack.extend(node.left);
        }
        out
    }

    pub fn nearest<M: Metric + ?Sized>(&self, q: &[f64], metric: &M) -> Result<QueryResult> {
        self.nearest_observed(q, metric, SearchOptions::default(), &mut ())
    }

    /// Depth-first nearest-neighbor search with a radius that shrinks to the
    /// best distance found so far.
    pub fn nearest_observed<M: Metric + ?Sized, O: TreeObserver>(
        &self,
        q: &[f64],
        metric: &M,
        opts: SearchOptions,
        observer: &mut O,
    ) -> Result<QueryResult> {
        self.dataset.check_query(q)?;
        let mut walk = Walk {
            tree: self,
            q,
            metric: Counted::new(metric),
            opts,
            observer,
        };
        let mut best = (self.nodes[0].point, f64::INFINITY);
        walk.nearest(self.root(), &mut best);
        Ok(QueryResult {
            index: best.0,
            distance: best.1,
            evals: walk.metric.evaluations(),
        })
    }

    /// Every point with `d(q, p) < eps`, ascending by index.
    pub fn range<M: Metric + ?Sized>(&self, q: &[f64], eps: f64, metric: &M) -> Result<Vec<Neighbor>> {
        self.range_observed(q, eps, metric, &mut ()).map(|(hits, _)| hits)
    }

    /// Range search; also returns the evaluation count.
    pub fn range_observed<M: Metric + ?Sized, O: TreeObserver>(
        &self,
        q: &[f64],
        eps: f64,
        metric: &M,
        observer: &mut O,
    ) -> Result<(Vec<Neighbor>, u64)> {
        check_eps(eps)?;
        self.dataset.check_query(q)?;
        let mut walk = Walk {
            tree: self,
            q,
            metric: Counted::new(metric),
            opts: SearchOptions::default(),
            observer,
        };
        let mut hits = Vec::new();
        walk.range(self.root(), eps, &mut hits);
        hits.sort_unstable_by_key(|n| n.index);
        Ok((hits, walk.metric.evaluations()))
    }

    /// Re-check every node invariant with fresh distance evaluations.
    pub fn audit<M: Metric + ?Sized>(&self, metric: &M) -> std::result::Result<(), AuditError> {
        let fail = |id: NodeId, message: String| AuditError {
            node: id,
            point: self.nodes[id].point,
            message,
        };
        if self.nodes.len() != self.dataset.len() {
            return Err(fail(
                0,
                format!("{} nodes for {} points", self.nodes.len(), self.dataset.len()),
            ));
        }
        let mut seen = vec![false; self.dataset.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if std::mem::replace(&mut seen[node.point], true) {
                return Err(fail(id, "point stored twice".into()));
            }
        }
        let mut reached = vec![false; self.nodes.len()];
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut reached[id], true) {
                return Err(fail(id, "node reachable twice".into()));
            }
            let node = &self.nodes[id];
            stack.extend(node.left);
            stack.extend(node.right);
        }
        if let Some(id) = reached.iter().position(|r| !r) {
            return Err(fail(id, "node unreachable from root".into()));
        }

        for (id, node) in self.nodes.iter().enumerate() {
            let s = self.dataset.point(node.point);
            let left = node.left.map(|c| self.subtree_points(c)).unwrap_or_default();
            let right = node.right.map(|c| self.subtree_points(c)).unwrap_or_default();
            if !(left.len() == right.len() || left.len() == right.len() + 1) {
                return Err(fail(
                    id,
                    format!("unbalanced split |L|={} |R|={}", left.len(), right.len()),
                ));
            }
            let slack = 1e-12 * (1.0 + node.mu);
            let max_left = left
                .iter()
                .map(|&l| metric.distance(self.dataset.point(l), s))
                .fold(0.0, f64::max);
            if (max_left - node.mu).abs() > slack {
                return Err(fail(id, format!("mu = {} but max left distance = {max_left}", node.mu)));
            }
            if let Some(&r) = right
                .iter()
                .find(|&&r| metric.distance(self.dataset.point(r), s) < node.mu - slack)
            {
                return Err(fail(id, format!("right point {r} lies inside mu = {}", node.mu)));
            }
        }
        Ok(())
    }
}

struct Walk<'t, 'd, 'q, 'm, 'o, M: ?Sized, O> {
    tree: &'t MetricTree<'d>,
    q: &'q [f64],
    metric: Counted<'m, M>,
    opts: SearchOptions,
    observer: &'o mut O,
}

impl<M: Metric + ?Sized, O: TreeObserver> Walk<'_, '_, '_, '_, '_, M, O> {
    fn children(&self, node: &TreeNode, d: f64) -> [(Side, Option<NodeId>); 2] {
        let left = (Side::Left, node.left);
        let right = (Side::Right, node.right);
        if !self.opts.near_side_first || d <= node.mu {
            [left, right]
        } else {
            [right, left]
        }
    }

    fn prunes(&self, side: Side, d: f64, mu: f64, eps: f64) -> bool {
        match side {
            Side::Left => d > mu + eps,
            Side::Right if self.opts.invert_right_prune => d > mu - eps,
            Side::Right => d < mu - eps,
        }
    }

    fn nearest(&mut self, id: NodeId, best: &mut (usize, f64)) {
        let node = &self.tree.nodes[id];
        let d = self.metric.distance(self.q, self.tree.dataset.point(node.point));
        if d < best.1 {
            *best = (node.point, d);
        }
        for (side, child) in self.children(node, d) {
            let Some(child) = child else { continue };
            let eps = best.1;
            if self.prunes(side, d, node.mu, eps) {
                self.observer.pruned(id, child, side, d, eps);
            } else {
                self.nearest(child, best);
            }
        }
    }

    fn range(&mut self, id: NodeId, eps: f64, hits: &mut Vec<Neighbor>) {
        let node = &self.tree.nodes[id];
        let d = self.metric.distance(self.q, self.tree.dataset.point(node.point));
        if d < eps {
            hits.push(Neighbor {
                index: node.point,
                distance: d,
            });
        }
        for (side, child) in self.children(node, d) {
            let Some(child) = child else { continue };
            if self.prunes(side, d, node.mu, eps) {
                self.observer.pruned(id, child, side, d, eps);
            } else {
                self.range(child, eps, hits);
            }
        }
    }
}
