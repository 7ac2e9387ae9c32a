//! `metricnn` command line.
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error.
//! Flags are fully parsed and validated before any work starts.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::bench::{self, Algorithm, EfficiencyRecord, ExperimentConfig, DEFAULT_DIMS};
use crate::fit::{self, FitOptions, LogBase, SigmoidFit};
use crate::metric::Euclidean;
use crate::tree::VpConfig;
use crate::verify::{self, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "metricnn", version, about = "Nearest-neighbor search efficiency benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure the fraction of distances evaluated per query over a grid.
    Bench(BenchArgs),
    /// Fit the logistic efficiency model to a benchmark CSV.
    Fit(FitArgs),
    /// Check every index against brute force on random instances.
    Verify(VerifyArgs),
    /// Emit measured vs fitted efficiency columns for plotting.
    Curves(CurvesArgs),
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated algorithms: orchard, ball, vp (brute for a baseline).
    #[arg(long = "algo", value_delimiter = ',', default_value = "orchard,ball,vp")]
    pub algorithms: Vec<Algorithm>,
    /// Comma-separated dataset sizes.
    #[arg(long = "n", value_delimiter = ',', default_value = "1000,3000,9000", value_parser = positive)]
    pub sizes: Vec<usize>,
    /// Dimensions: a comma list, or `LO..HI` for the default grid
    /// 2,3,4,6,8,12,16,24,32 restricted to [LO, HI].
    #[arg(long = "d", default_value = "2..32", value_parser = parse_dims)]
    pub dims: Dims,
    #[arg(long, default_value_t = bench::DEFAULT_REALIZATIONS, value_parser = positive)]
    pub realizations: usize,
    /// Queries per realization.
    #[arg(long, default_value_t = bench::DEFAULT_QUERIES, value_parser = positive)]
    pub queries: usize,
    #[arg(long, env = "METRICNN_SEED", default_value_t = 1)]
    pub seed: u64,
    /// CSV destination (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write `algorithm n d build_evals build_ms` lines here.
    #[arg(long)]
    pub build_log: Option<PathBuf>,
    /// Worker threads for running cells concurrently.
    #[arg(long, default_value_t = 1, value_parser = positive)]
    pub threads: usize,
    /// Candidate vantage points scored per VP-tree node.
    #[arg(long, default_value_t = VpConfig::default().num_candidates, value_parser = positive)]
    pub vp_candidates: usize,
    /// Points sampled to score each vantage candidate.
    #[arg(long, default_value_t = VpConfig::default().subsample_size, value_parser = positive)]
    pub vp_subsample: usize,
    /// Suppress per-cell progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Algorithm to fit; every algorithm in the file if omitted.
    #[arg(long = "algo")]
    pub algorithm: Option<Algorithm>,
    /// Logarithm base in the model: `e` or `10`.
    #[arg(long, default_value = "e")]
    pub log_base: LogBase,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub instances: usize,
    #[arg(long, env = "METRICNN_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Break the tree pruning rule to check that the harness notices.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Fit records as printed by `fit`.
    #[arg(long = "fit")]
    pub fit: PathBuf,
    /// Output file (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "e")]
    pub log_base: LogBase,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

fn positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// `2..32` selects the default grid within the bounds; otherwise a comma list.
pub fn parse_dims(s: &str) -> Result<Dims, String> {
    if let Some((lo, hi)) = s.split_once("..") {
        let lo = positive(lo)?;
        let hi = positive(hi)?;
        if lo > hi {
            return Err(format!("empty dimension range {lo}..{hi}"));
        }
        let dims: Vec<usize> = DEFAULT_DIMS.iter().copied().filter(|d| (lo..=hi).contains(d)).collect();
        if dims.is_empty() {
            return Err(format!("range {lo}..{hi} contains no grid dimension"));
        }
        return Ok(Dims(dims));
    }
    let dims = s.split(',').map(positive).collect::<Result<Vec<_>, _>>()?;
    Ok(Dims(dims))
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{rendered}")
            } else {
                write!(stderr, "{rendered}")
            };
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Bench(a) => cmd_bench(&a, stdout, stderr),
        Command::Fit(a) => cmd_fit(&a, stdout),
        Command::Verify(a) => cmd_verify(&a, stdout),
        Command::Curves(a) => cmd_curves(&a, stdout),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            1
        }
    }
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => stdout.write_all(text.as_bytes()).context("writing stdout"),
    }
}

pub fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write, stderr: &mut (dyn Write + Send)) -> anyhow::Result<i32> {
    let config = ExperimentConfig {
        algorithms: args.algorithms.clone(),
        n_values: args.sizes.clone(),
        d_values: args.dims.0.clone(),
        realizations: args.realizations,
        queries_per_realization: args.queries,
        base_seed: args.seed,
        vp_config: VpConfig {
            num_candidates: args.vp_candidates,
            subsample_size: args.vp_subsample,
        },
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .context("starting worker threads")?;
    let progress = std::sync::Mutex::new(&mut *stderr);
    let quiet = args.quiet;
    let (records, builds) = pool.install(|| {
        bench::run_grid(&config, &Euclidean, |r| {
            if !quiet {
                if let Ok(mut w) = progress.lock() {
                    let _ = writeln!(w, "{} n={} d={} mean_f={:.6} std_f={:.6}", r.algorithm, r.n, r.d, r.mean_f, r.std_f);
                }
            }
        })
    })?;
    write_output(args.out.as_deref(), &bench::records_to_string(&records), stdout)?;
    if let Some(path) = &args.build_log {
        let mut buf = Vec::new();
        bench::write_build_log(&builds, &mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(0)
}

fn fits_for(records: &[EfficiencyRecord], only: Option<Algorithm>, base: LogBase) -> anyhow::Result<Vec<SigmoidFit>> {
    let mut groups: BTreeMap<Algorithm, Vec<EfficiencyRecord>> = BTreeMap::new();
    for r in records {
        if only.is_none_or(|a| a == r.algorithm) {
            groups.entry(r.algorithm).or_default().push(r.clone());
        }
    }
    if let Some(a) = only {
        if !groups.contains_key(&a) {
            bail!("no records for algorithm {a}");
        }
    }
    if groups.is_empty() {
        bail!("no records to fit");
    }
    let opts = FitOptions {
        log_base: base,
        ..Default::default()
    };
    groups
        .into_iter()
        .map(|(a, recs)| fit::fit_sigmoid_with(&recs, &opts).with_context(|| format!("fitting {a}")))
        .collect()
}

pub fn cmd_fit(args: &FitArgs, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    let records = bench::read_records(&args.input)?;
    for fit in fits_for(&records, args.algorithm, args.log_base)? {
        writeln!(stdout, "{fit}")?;
    }
    Ok(0)
}

pub fn cmd_verify(args: &VerifyArgs, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    let opts = VerifyOptions {
        instances: args.instances,
        seed: args.seed,
        inject_fault: args.inject_fault,
        ..Default::default()
    };
    let report = verify::run(&opts, &Euclidean)?;
    writeln!(stdout, "{report}")?;
    Ok(if report.passed() { 0 } else { 1 })
}

/// Columns `d n measured_f fitted_f residual`, one block per algorithm.
pub fn curves_text(records: &[EfficiencyRecord], fits: &[SigmoidFit]) -> anyhow::Result<String> {
    let in_csv: BTreeSet<Algorithm> = records.iter().map(|r| r.algorithm).collect();
    let in_fit: BTreeSet<Algorithm> = fits.iter().map(|f| f.algorithm).collect();
    if in_csv != in_fit {
        let names = |s: &BTreeSet<Algorithm>| s.iter().map(|a| a.name()).collect::<Vec<_>>().join(",");
        bail!(
            "algorithm sets differ: csv has {{{}}}, fit file has {{{}}}",
            names(&in_csv),
            names(&in_fit)
        );
    }
    let mut out = String::new();
    for (k, fit) in fits.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        out.push_str(&format!("# {fit}\n"));
        out.push_str(&format!(
            "#{:>7} {:>8} {:>20} {:>20} {:>20}\n",
            "d", "n", "measured_f", "fitted_f", "residual"
        ));
        let mut rows: Vec<&EfficiencyRecord> = records.iter().filter(|r| r.algorithm == fit.algorithm).collect();
        rows.sort_by_key(|r| (r.n, r.d));
        for r in rows {
            let fitted = fit.predict(r.d as f64, r.n as f64);
            out.push_str(&format!(
                "{:>8} {:>8} {:>20.15} {:>20.15} {:>20.15}\n",
                r.d,
                r.n,
                r.mean_f,
                fitted,
                r.mean_f - fitted
            ));
        }
    }
    Ok(out)
}

pub fn cmd_curves(args: &CurvesArgs, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    let records = bench::read_records(&args.input)?;
    let text = fs::read_to_string(&args.fit).with_context(|| format!("reading {}", args.fit.display()))?;
    let fits = fit::parse_fits(&text, args.log_base)
        .map_err(|(line, m)| anyhow::anyhow!("{}, line {line}: {m}", args.fit.display()))?;
    let out = curves_text(&records, &fits)?;
    write_output(args.out.as_deref(), &out, stdout)?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("metricnn").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn dims_syntax() {
        assert_eq!(parse_dims("2..32").unwrap().0, DEFAULT_DIMS.to_vec());
        assert_eq!(parse_dims("3..8").unwrap().0, vec![3, 4, 6, 8]);
        assert_eq!(parse_dims("3").unwrap().0, vec![3]);
        assert_eq!(parse_dims("2,5,7").unwrap().0, vec![2, 5, 7]);
        assert!(parse_dims("9..3").is_err());
        assert!(parse_dims("0").is_err());
        assert!(parse_dims("33..40").is_err());
        assert!(parse_dims("a").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_args(&[]).0, 2);
        assert_eq!(run_args(&["verify", "--instances", "0"]).0, 2);
        assert_eq!(run_args(&["bench", "--algo", "kd"]).0, 2);
        assert_eq!(run_args(&["bench", "--n", "0"]).0, 2);
        assert_eq!(run_args(&["bench", "--d", "5..2"]).0, 2);
        assert_eq!(run_args(&["fit"]).0, 2);
        assert_eq!(run_args(&["frobnicate"]).0, 2);
        assert_eq!(run_args(&["--help"]).0, 0);
    }

    #[test]
    fn bench_single_cell() {
        let (code, out, _) = run_args(&[
            "bench", "--algo", "vp", "--n", "1000", "--d", "3", "--realizations", "2", "--queries", "10", "--seed", "7", "--quiet",
        ]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "algorithm,n,d,realizations,queries,mean_f,std_f");
        assert!(lines[1].starts_with("vp,1000,3,2,10,"));
    }

    #[test]
    fn curves_reject_mismatched_algorithms() {
        let recs = vec![EfficiencyRecord {
            algorithm: Algorithm::Vp,
            n: 1000,
            d: 3,
            realizations: 1,
            queries: 10,
            mean_f: 0.02,
            std_f: 0.0,
        }];
        let fit = SigmoidFit {
            algorithm: Algorithm::Ball,
            alpha: 1.0,
            beta: 0.5,
            rmse: 0.0,
            n_points: 1,
            log_base: LogBase::Natural,
        };
        assert!(curves_text(&recs, std::slice::from_ref(&fit)).is_err());
        let ok = SigmoidFit {
            algorithm: Algorithm::Vp,
            ..fit
        };
        let text = curves_text(&recs, &[ok]).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1);
    }
}
