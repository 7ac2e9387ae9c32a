use std::path::Path;
use std::process::{Command, Output};

use metricnn::bench::{records_to_string, Algorithm, EfficiencyRecord};
use metricnn::fit::sigmoid;

fn metricnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metricnn"))
        .args(args)
        .env_remove("METRICNN_SEED")
        .output()
        .expect("spawn metricnn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn synthetic(algorithm: Algorithm, alpha: f64, beta: f64) -> Vec<EfficiencyRecord> {
    let mut recs = Vec::new();
    for n in [1000usize, 3000, 9000] {
        for d in [2usize, 3, 4, 6, 8, 12, 16, 24, 32] {
            recs.push(EfficiencyRecord {
                algorithm,
                n,
                d,
                realizations: 1,
                queries: 100,
                mean_f: sigmoid(d as f64, n as f64, alpha, beta),
                std_f: 0.0,
            });
        }
    }
    recs
}

fn synthetic_csv(algorithm: Algorithm, alpha: f64, beta: f64) -> String {
    records_to_string(&synthetic(algorithm, alpha, beta))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn bench_single_row() {
    let o = metricnn(&["bench", "--algo", "vp", "--n", "1000", "--d", "3", "--realizations", "2", "--queries", "10", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "algorithm,n,d,realizations,queries,mean_f,std_f");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&fields[..5], &["vp", "1000", "3", "2", "10"]);
    let f: f64 = fields[5].parse().unwrap();
    assert!(f > 0.0 && f < 1.0);
    assert!(!out.contains('\r'));
    // progress lines go to stderr only
    assert!(stderr(&o).contains("vp n=1000 d=3"));
}

#[test]
fn bench_size_grid_shape_and_repeatability() {
    let args = [
        "bench", "--algo", "orchard,ball,vp", "--n", "1000,3000,9000", "--d", "3", "--seed", "7", "--realizations", "1",
        "--queries", "10", "--quiet",
    ];
    let a = metricnn(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let out = stdout(&a);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    let keys: Vec<String> = rows.iter().map(|r| r.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(keys[0], "orchard,1000,3");
    assert_eq!(keys[2], "orchard,9000,3");
    assert_eq!(keys[8], "vp,9000,3");
    let b = metricnn(&args);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn bench_out_file_and_build_log() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grid.csv");
    let log = dir.path().join("build.log");
    let o = metricnn(&[
        "bench", "--algo", "orchard,ball", "--n", "200", "--d", "2..4", "--realizations", "2", "--queries", "5", "--quiet",
        "--out", csv.to_str().unwrap(), "--build-log", log.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let records = metricnn::bench::read_records(&csv).unwrap();
    assert_eq!(records.len(), 2 * 3);
    assert_eq!(records.iter().map(|r| r.d).collect::<Vec<_>>(), vec![2, 3, 4, 2, 3, 4]);
    let log = std::fs::read_to_string(&log).unwrap();
    let first: Vec<&str> = log.lines().next().unwrap().split(' ').collect();
    assert_eq!(&first[..4], &["orchard", "200", "2", "19900"]);
}

#[test]
fn seed_from_environment() {
    let base = ["bench", "--algo", "ball", "--n", "300", "--d", "3", "--realizations", "1", "--queries", "5", "--quiet"];
    let run_env = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_metricnn"))
            .args(base)
            .env("METRICNN_SEED", seed)
            .output()
            .unwrap()
    };
    let mut explicit = base.to_vec();
    explicit.extend(["--seed", "42"]);
    assert_eq!(run_env("42").stdout, metricnn(&explicit).stdout);
    assert_eq!(run_env("abc").status.code(), Some(2));
}

#[test]
fn fit_recovers_synthetic_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "orchard.csv", &synthetic_csv(Algorithm::Orchard, 1.75, 0.3));
    let o = metricnn(&["fit", "--in", &path, "--algo", "orchard"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let fields: Vec<&str> = out.trim_end().split(' ').collect();
    assert_eq!(fields.len(), 5);
    assert_eq!(fields[0], "orchard");
    // The CSV stores six significant digits, which bounds the recovery.
    let alpha: f64 = fields[1].parse().unwrap();
    let beta: f64 = fields[2].parse().unwrap();
    assert!((alpha - 1.75).abs() < 1e-3, "{out}");
    assert!((beta - 0.3).abs() < 1e-3, "{out}");
    assert!(fields[3].parse::<f64>().unwrap() < 1e-5);
    assert_eq!(fields[4], "27");
}

#[test]
fn fit_every_algorithm_without_algo_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = synthetic_csv(Algorithm::Ball, 0.96, 0.6);
    let vp = synthetic_csv(Algorithm::Vp, 1.25, 0.65);
    text.push_str(vp.split_once('\n').unwrap().1);
    let path = write(dir.path(), "both.csv", &text);
    let o = metricnn(&["fit", "--in", &path]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let names: Vec<&str> = out.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(names, vec!["ball", "vp"]);
}

#[test]
fn fit_errors() {
    let dir = tempfile::tempdir().unwrap();
    let full = synthetic_csv(Algorithm::Vp, 1.25, 0.65);
    let two: String = full.lines().take(3).map(|l| format!("{l}\n")).collect();
    let path = write(dir.path(), "two.csv", &two);
    let o = metricnn(&["fit", "--in", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error"));

    let mut lines: Vec<String> = full.lines().map(str::to_owned).collect();
    lines[4] = "vp,1000,x,1,100,0.5,0".into();
    let path = write(dir.path(), "bad.csv", &(lines.join("\n") + "\n"));
    let o = metricnn(&["fit", "--in", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));

    let path = write(dir.path(), "ok.csv", &full);
    assert_eq!(metricnn(&["fit", "--in", &path, "--algo", "ball"]).status.code(), Some(1));
    assert_eq!(metricnn(&["fit", "--in", &path, "--log-base", "7"]).status.code(), Some(2));
    assert_eq!(metricnn(&["fit", "--in", "/nonexistent/x.csv"]).status.code(), Some(1));
}

#[test]
fn verify_exit_codes() {
    let o = metricnn(&["verify", "--instances", "100", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).trim_end().ends_with("verify: PASS"));

    let o = metricnn(&["verify", "--instances", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--instances"));

    let o = metricnn(&["verify", "--instances", "30", "--seed", "1", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    let fail = out.lines().find(|l| l.starts_with("FAIL ")).expect("a failure line");
    for key in ["seed=", "n=", "d=", "query="] {
        assert!(fail.contains(key), "{fail}");
    }
}

#[test]
fn usage_errors() {
    assert_eq!(metricnn(&[]).status.code(), Some(2));
    assert_eq!(metricnn(&["bench", "--algo", "kd"]).status.code(), Some(2));
    assert_eq!(metricnn(&["bench", "--queries", "0"]).status.code(), Some(2));
    assert_eq!(metricnn(&["bench", "--bogus"]).status.code(), Some(2));
    assert_eq!(metricnn(&["--version"]).status.code(), Some(0));
    let help = metricnn(&["bench", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("--realizations"));
}

fn curves_rows(text: &str) -> Vec<(String, Vec<f64>)> {
    let mut algo = String::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            if !rest.trim_start().starts_with('d') {
                algo = rest.split(' ').next().unwrap().to_owned();
            }
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        rows.push((algo.clone(), line.split_whitespace().map(|v| v.parse().unwrap()).collect()));
    }
    rows
}

#[test]
fn curves_columns_and_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = synthetic(Algorithm::Ball, 0.96, 0.6);
    // One perturbed entry so the residual column is not all zero.
    recs[0].mean_f = 0.5;
    let csv = write(dir.path(), "ball.csv", &records_to_string(&recs));
    let fit = metricnn(&["fit", "--in", &csv]);
    assert_eq!(fit.status.code(), Some(0), "{}", stderr(&fit));
    let fit_path = write(dir.path(), "ball.fit", &stdout(&fit));
    let out_path = dir.path().join("curves.dat");
    let o = metricnn(&["curves", "--in", &csv, "--fit", &fit_path, "--out", out_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let fit_fields: Vec<f64> = stdout(&fit).split(' ').skip(1).take(2).map(|v| v.parse().unwrap()).collect();
    let rows = curves_rows(&std::fs::read_to_string(&out_path).unwrap());
    assert_eq!(rows.len(), 27);
    for (algo, r) in &rows {
        assert_eq!(algo, "ball");
        let (d, n, measured, fitted, residual) = (r[0], r[1], r[2], r[3], r[4]);
        assert!((residual - (measured - fitted)).abs() < 1e-12);
        assert!((fitted - sigmoid(d, n, fit_fields[0], fit_fields[1])).abs() < 1e-5);
    }
    assert!(rows.iter().any(|(_, r)| r[4].abs() > 0.1));
}

#[test]
fn curves_single_record_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(
        dir.path(),
        "one.csv",
        "algorithm,n,d,realizations,queries,mean_f,std_f\nvp,1000,3,1,10,0.02,0\n",
    );
    let fit = write(dir.path(), "vp.fit", "vp 1.25 0.65 0.01 27\n");
    let o = metricnn(&["curves", "--in", &csv, "--fit", &fit]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = curves_rows(&stdout(&o));
    assert_eq!(rows.len(), 1);
    let expected = sigmoid(3.0, 1000.0, 1.25, 0.65);
    assert!((rows[0].1[3] - expected).abs() < 1e-12);

    let other = write(dir.path(), "ball.fit", "ball 0.96 0.6 0.01 27\n");
    let o = metricnn(&["curves", "--in", &csv, "--fit", &other]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("algorithm sets differ"));
}
