//! Logistic efficiency model and its weighted least-squares fit.
//!
//! The model is `f(D, N) = 1 / (1 + exp(-beta (D - alpha log N)))`, with the
//! natural logarithm unless [`LogBase::Ten`] is requested. Fitting minimises
//! `sum_i w_i (f_i - model_i)^2` with inverse-variance weights: a coarse grid
//! search picks the starting point and Gauss-Newton refines it.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bench::{Algorithm, EfficiencyRecord};
use crate::numfmt::sig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    pub fn log(self, n: f64) -> f64 {
        match self {
            LogBase::Natural => n.ln(),
            LogBase::Ten => n.log10(),
        }
    }
}

impl FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e" | "ln" | "natural" => Ok(LogBase::Natural),
            "10" | "log10" => Ok(LogBase::Ten),
            other => Err(format!("unknown log base `{other}` (expected `e` or `10`)")),
        }
    }
}

/// The efficiency model with natural logarithm.
pub fn sigmoid(d: f64, n: f64, alpha: f64, beta: f64) -> f64 {
    sigmoid_in_base(d, n, alpha, beta, LogBase::Natural)
}

pub fn sigmoid_in_base(d: f64, n: f64, alpha: f64, beta: f64, base: LogBase) -> f64 {
    1.0 / (1.0 + (-beta * (d - alpha * base.log(n))).exp())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("records mix algorithms {0} and {1}")]
    MixedAlgorithms(Algorithm, Algorithm),

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error(
        "Gauss-Newton did not converge after {iterations} iterations \
         (gradient norm {gradient_norm:e}); best grid point alpha={grid_alpha}, beta={grid_beta}"
    )]
    NoConvergence {
        grid_alpha: f64,
        grid_beta: f64,
        iterations: usize,
        gradient_norm: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub log_base: LogBase,
    /// Lower bound on per-record variance when forming weights.
    pub variance_floor: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            log_base: LogBase::Natural,
            variance_floor: 1e-6,
            max_iterations: 200,
            gradient_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidFit {
    pub algorithm: Algorithm,
    pub alpha: f64,
    pub beta: f64,
    /// Unweighted root-mean-square residual over the fitted records.
    pub rmse: f64,
    pub n_points: usize,
    pub log_base: LogBase,
}

impl SigmoidFit {
    pub fn predict(&self, d: f64, n: f64) -> f64 {
        sigmoid_in_base(d, n, self.alpha, self.beta, self.log_base)
    }
}

/// `algorithm alpha beta rmse n_points`, six significant digits.
impl fmt::Display for SigmoidFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.algorithm,
            sig(self.alpha, 6),
            sig(self.beta, 6),
            sig(self.rmse, 6),
            self.n_points
        )
    }
}

/// Parse fit lines as written by [`SigmoidFit`]'s `Display`. Blank lines and
/// lines starting with `#` are skipped. Errors carry the 1-based line number.
pub fn parse_fits(text: &str, log_base: LogBase) -> Result<Vec<SigmoidFit>, (usize, String)> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| (lineno + 1, m);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64, (usize, String)> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| err(format!("field {}: {e}", i + 1)))
        };
        out.push(SigmoidFit {
            algorithm: fields[0].parse().map_err(err)?,
            alpha: num(1)?,
            beta: num(2)?,
            rmse: num(3)?,
            n_points: fields[4]
                .parse()
                .map_err(|e| err(format!("field 5: {e}")))?,
            log_base,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    d: f64,
    log_n: f64,
    f: f64,
    w: f64,
}

fn samples(records: &[EfficiencyRecord], opts: &FitOptions) -> Result<Vec<Sample>, FitError> {
    if records.len() < 3 {
        return Err(FitError::Insufficient(format!(
            "need at least 3 records, got {}",
            records.len()
        )));
    }
    let algorithm = records[0].algorithm;
    if let Some(r) = records.iter().find(|r| r.algorithm != algorithm) {
        return Err(FitError::MixedAlgorithms(algorithm, r.algorithm));
    }
    let ds: BTreeSet<usize> = records.iter().map(|r| r.d).collect();
    let ns: BTreeSet<usize> = records.iter().map(|r| r.n).collect();
    if ds.len() < 2 || ns.len() < 2 {
        return Err(FitError::Insufficient(format!(
            "need at least 2 distinct d and 2 distinct n, got {} and {}",
            ds.len(),
            ns.len()
        )));
    }
    if let Some(r) = records.iter().find(|r| !r.mean_f.is_finite() || !r.std_f.is_finite()) {
        return Err(FitError::Degenerate(format!(
            "non-finite statistics for n={} d={}",
            r.n, r.d
        )));
    }
    let raw: Vec<f64> = records
        .iter()
        .map(|r| {
            if r.realizations >= 2 {
                1.0 / (r.std_f * r.std_f).max(opts.variance_floor)
            } else {
                1.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(records
        .iter()
        .zip(raw)
        .map(|(r, w)| Sample {
            d: r.d as f64,
            log_n: opts.log_base.log(r.n as f64),
            f: r.mean_f,
            w: w / total,
        })
        .collect())
}

fn model(s: &Sample, alpha: f64, beta: f64) -> f64 {
    1.0 / (1.0 + (-beta * (s.d - alpha * s.log_n)).exp())
}

fn weighted_sse(samples: &[Sample], alpha: f64, beta: f64) -> f64 {
    samples
        .iter()
        .map(|s| {
            let r = s.f - model(s, alpha, beta);
            s.w * r * r
        })
        .sum()
}

/// The minimised objective, with weights normalised to sum to one.
pub fn objective(
    records: &[EfficiencyRecord],
    alpha: f64,
    beta: f64,
    opts: &FitOptions,
) -> Result<f64, FitError> {
    Ok(weighted_sse(&samples(records, opts)?, alpha, beta))
}

/// Grid over alpha in [0.1, 5] and beta in [0.05, 2], step 0.05.
fn grid_start(samples: &[Sample]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for a in 0..=98 {
        let alpha = 0.1 + 0.05 * a as f64;
        for b in 0..=39 {
            let beta = 0.05 + 0.05 * b as f64;
            let s = weighted_sse(samples, alpha, beta);
            if s < best.0 {
                best = (s, alpha, beta);
            }
        }
    }
    (best.1, best.2)
}

/// Normal equations `(J^T W J) step = J^T W r` and the objective gradient.
fn normal_equations(samples: &[Sample], alpha: f64, beta: f64) -> ([[f64; 2]; 2], [f64; 2], [f64; 2]) {
    let mut a = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    for s in samples {
        let m = model(s, alpha, beta);
        let slope = m * (1.0 - m);
        let g = [-slope * beta * s.log_n, slope * (s.d - alpha * s.log_n)];
        let r = s.f - m;
        for i in 0..2 {
            b[i] += s.w * r * g[i];
            for j in 0..2 {
                a[i][j] += s.w * g[i] * g[j];
            }
        }
    }
    let grad = [-2.0 * b[0], -2.0 * b[1]];
    (a, b, grad)
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a[0][0].abs().max(a[1][1].abs());
    if !det.is_finite() || det.abs() <= 1e-300 || det.abs() <= 1e-14 * scale * scale {
        return None;
    }
    Some([
        (b[0] * a[1][1] - b[1] * a[0][1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ])
}

pub fn fit_sigmoid(records: &[EfficiencyRecord]) -> Result<SigmoidFit, FitError> {
    fit_sigmoid_with(records, &FitOptions::default())
}

pub fn fit_sigmoid_with(records: &[EfficiencyRecord], opts: &FitOptions) -> Result<SigmoidFit, FitError> {
    let samples = samples(records, opts)?;
    let (grid_alpha, grid_beta) = grid_start(&samples);
    let no_convergence = |iterations: usize, gradient_norm: f64| FitError::NoConvergence {
        grid_alpha,
        grid_beta,
        iterations,
        gradient_norm,
    };

    let (mut alpha, mut beta) = (grid_alpha, grid_beta);
    let mut sse = weighted_sse(&samples, alpha, beta);
    let mut converged = false;
    let mut gradient_norm = f64::INFINITY;
    for iteration in 0..opts.max_iterations {
        let (a, b, grad) = normal_equations(&samples, alpha, beta);
        gradient_norm = grad[0].hypot(grad[1]);
        if gradient_norm < opts.gradient_tolerance {
            converged = true;
            break;
        }
        let step = solve2(a, b).ok_or_else(|| {
            FitError::Degenerate(format!("singular normal equations at alpha={alpha}, beta={beta}"))
        })?;
        // Halve the step until the objective does not increase.
        let mut t = 1.0;
        let accepted = loop {
            let (na, nb) = (alpha + t * step[0], beta + t * step[1]);
            let ns = weighted_sse(&samples, na, nb);
            if ns <= sse {
                break Some((na, nb, ns));
            }
            t *= 0.5;
            if t < 1e-12 {
                break None;
            }
        };
        let Some((na, nb, ns)) = accepted else {
            return Err(no_convergence(iteration, gradient_norm));
        };
        let moved = (na - alpha).hypot(nb - beta);
        (alpha, beta, sse) = (na, nb, ns);
        // A step below rounding resolution means the iterate is stationary
        // to machine precision.
        if moved <= 1e-15 * (1.0 + alpha.hypot(beta)) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(no_convergence(opts.max_iterations, gradient_norm));
    }
    if beta <= 0.0 || !alpha.is_finite() || !beta.is_finite() {
        return Err(FitError::Degenerate(format!(
            "fitted beta must be positive, got alpha={alpha}, beta={beta}"
        )));
    }

    let rmse = (samples
        .iter()
        .map(|s| (s.f - model(s, alpha, beta)).powi(2))
        .sum::<f64>()
        / samples.len() as f64)
        .sqrt();
    Ok(SigmoidFit {
        algorithm: records[0].algorithm,
        alpha,
        beta,
        rmse,
        n_points: samples.len(),
        log_base: opts.log_base,
    })
}
