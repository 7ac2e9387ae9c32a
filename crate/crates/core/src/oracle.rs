//! Brute-force search: the `f = 1` baseline and the correctness oracle for
//! every index in the crate.

use crate::error::{Error, Result};
use crate::metric::{Counted, Dataset, Metric};

/// Result of a nearest-neighbor query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub index: usize,
    pub distance: f64,
    /// Query-time distance evaluations.
    pub evals: u64,
}

/// A point reported by a range query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Linear scan; ties go to the smallest index.
pub fn brute_force_nn<M: Metric + ?Sized>(
    q: &[f64],
    dataset: &Dataset,
    metric: &M,
) -> Result<QueryResult> {
    dataset.check_query(q)?;
    let mut counted = Counted::new(metric);
    let mut best = QueryResult {
        index: 0,
        distance: f64::INFINITY,
        evals: 0,
    };
    for (i, p) in dataset.points().enumerate() {
        let d = counted.distance(q, p);
        if d < best.distance {
            best.index = i;
            best.distance = d;
        }
    }
    best.evals = counted.evaluations();
    Ok(best)
}

/// Every point with `d(q, p) < eps`, ascending by index.
pub fn brute_force_range<M: Metric + ?Sized>(
    q: &[f64],
    dataset: &Dataset,
    eps: f64,
    metric: &M,
) -> Result<Vec<Neighbor>> {
    check_eps(eps)?;
    dataset.check_query(q)?;
    Ok(dataset
        .points()
        .enumerate()
        .filter_map(|(index, p)| {
            let distance = metric.distance(q, p);
            (distance < eps).then_some(Neighbor { index, distance })
        })
        .collect())
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::invalid(format!(
            "range radius must be non-negative, got {eps}"
        )));
    }
    Ok(())
}
