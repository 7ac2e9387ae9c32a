//! Exact nearest-neighbor search in metric spaces.
//!
//! Three indexes answer the same query, "which point of `S` is closest to
//! `q`?", while counting every distance evaluation they make:
//!
//! - [`orchard::OrchardIndex`]: a per-point table of all other points sorted
//!   by distance, searched with the `2r` triangle-inequality stopping rule.
//! - [`tree::MetricTree::ball`]: a balanced ball tree with random node points.
//! - [`tree::MetricTree::vp`]: the same tree with node points chosen to
//!   maximize the spread of distances about their median.
//!
//! [`oracle`] holds the brute-force baseline. [`bench`] measures the fraction
//! `f` of the dataset each index touches per query, and [`fit`] fits the
//! logistic model `f(D, N) = 1 / (1 + exp(-beta (D - alpha ln N)))` to the
//! measurements.
//!
//! ```
//! use metricnn::metric::{gaussian_dataset, Euclidean};
//! use metricnn::tree::{MetricTree, VpConfig};
//!
//! let data = gaussian_dataset(1000, 3, 7).unwrap();
//! let tree = MetricTree::vp(&data, &Euclidean, &VpConfig::default(), 7).unwrap();
//! let hit = tree.nearest(&[0.1, 0.2, 0.3], &Euclidean).unwrap();
//! assert!(hit.evals < 1000);
//! ```

pub mod bench;
pub mod cli;
pub mod error;
pub mod fit;
pub mod metric;
pub mod oracle;
pub mod orchard;
pub mod rng;
pub mod tree;
pub mod verify;

mod numfmt;

pub use error::{Error, Result};
