use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dbexp_core::covariates::{spec_ii, zero_center};
use dbexp_core::design::{combinations, Design, StackedOutcomes};
use dbexp_core::optimal::b_opt;
use nalgebra::DMatrix;
use serde_json::Value;
use tempfile::TempDir;

fn dbexp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbexp"))
        .current_dir(dir)
        .env_remove("DBEXP_SEED")
        .env_remove("DBEXP_Z")
        .env_remove("DBEXP_OUT_DIR")
        .env_remove("DBEXP_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const CLUSTERED: &str = "outcome,treatment,cluster_id,x\n1,1,1,0.2\n2,1,1,0.5\n3,0,2,1.0\n5,0,2,0.1\n2,1,3,0.3\n4,0,4,2.0\n1,1,3,1.0\n3,0,4,0.7\n";

#[test]
fn worked_example_point_and_manifest() {
    let t = TempDir::new().unwrap();
    write(t.path(), "toy.csv", "outcome,treatment\n1,1\n2,0\n");
    let out = dbexp(t.path(), &["--out-dir", "out", "estimate", "--data", "toy.csv", "--design", "complete:n1=1", "--estimators", "ht"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&t.path().join("out/report.csv"));
    assert_eq!(header, ["estimator", "spec", "point", "variance_bound", "ci_low", "ci_high"]);
    assert_eq!(rows[0][0], "ht");
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), -1.0);
    let m = manifest(&t.path().join("out"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["command"], "estimate");
    assert_eq!(m["core_version"], dbexp_core::VERSION);
    assert_eq!(m["config"]["design"]["resolved"]["kind"], "complete");
}

#[test]
fn missing_outcome_cell_is_an_input_error() {
    let t = TempDir::new().unwrap();
    write(t.path(), "bad.csv", "outcome,treatment\n1,1\n,0\n");
    let out = dbexp(t.path(), &["--out-dir", "out", "estimate", "--data", "bad.csv", "--design", "complete:n1=1"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("outcome"), "{err}");
    let m = manifest(&t.path().join("out"));
    assert_eq!(m["status"], "error");
    assert_eq!(m["exit_code"], 2);
}

#[test]
fn unidentified_design_exits_three() {
    let t = TempDir::new().unwrap();
    write(t.path(), "toy.csv", "outcome,treatment\n1,1\n2,1\n");
    let out = dbexp(t.path(), &["--out-dir", "out", "estimate", "--data", "toy.csv", "--design", "bernoulli:p=1"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn borrowed_bound_adds_interval_columns() {
    let t = TempDir::new().unwrap();
    write(t.path(), "cl.csv", CLUSTERED);
    let out = dbexp(
        t.path(),
        &["--out-dir", "out", "estimate", "--data", "cl.csv", "--design", "cluster:m1=2", "--estimators", "ht,2r,ols-cluster", "--bound", "cluster,borrowed"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&t.path().join("out/report.csv"));
    assert_eq!(&header[6..], ["borrowed_variance_bound", "borrowed_ci_low", "borrowed_ci_high"]);
    let two_r = rows.iter().find(|r| r[0] == "2r").unwrap();
    assert!(two_r[6].parse::<f64>().is_ok());
    let ht = rows.iter().find(|r| r[0] == "ht").unwrap();
    assert!(ht[6].is_empty());
}

#[test]
fn z_comes_from_the_environment() {
    let t = TempDir::new().unwrap();
    write(t.path(), "toy.csv", "outcome,treatment\n1,1\n2,0\n");
    let out = Command::new(env!("CARGO_BIN_EXE_dbexp"))
        .current_dir(t.path())
        .env("DBEXP_Z", "1")
        .env("DBEXP_OUT_DIR", "envout")
        .args(["estimate", "--data", "toy.csv", "--design", "complete:n1=1", "--estimators", "ht"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let (_, rows) = read_csv(&t.path().join("envout/report.csv"));
    let v: Vec<f64> = rows[0][2..6].iter().map(|s| s.parse().unwrap()).collect();
    assert!((v[3] - v[0] - v[1].sqrt()).abs() < 1e-12);
}

fn tiny_config(dir: &Path) {
    write(dir, "cfg.json", r#"{"replications": 40, "n_units": 60, "n_clusters": 12, "m1": 5, "seed": 3}"#);
}

#[test]
fn simulate_rows_flags_and_replay() {
    let t = TempDir::new().unwrap();
    tiny_config(t.path());
    let out = dbexp(
        t.path(),
        &["--out-dir", "a", "--seed", "11", "simulate", "--config", "cfg.json", "--replications", "25", "--spec-sets", "1,2,3"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&t.path().join("a/metrics.csv"));
    assert_eq!(rows.len(), 4 * 3);
    assert!(t.path().join("a/figure.svg").exists());
    let (_, reps) = read_csv(&t.path().join("a/replications.csv"));
    assert_eq!(reps.len(), 25 * 12);

    let m = manifest(&t.path().join("a"));
    assert_eq!(m["config"]["config_file_contents"]["replications"], 40);
    assert_eq!(m["config"]["overrides"]["replications"], 25);
    assert_eq!(m["config"]["resolved"]["replications"], 25);
    assert_eq!(m["config"]["resolved"]["seed"], 11);

    let out = dbexp(t.path(), &["--out-dir", "b", "replay", "a/manifest.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "replications.csv", "figure.svg"] {
        assert_eq!(fs::read(t.path().join("a").join(f)).unwrap(), fs::read(t.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_thread_count_does_not_change_output() {
    let t = TempDir::new().unwrap();
    tiny_config(t.path());
    let one = dbexp(t.path(), &["--out-dir", "one", "--threads", "1", "simulate", "--config", "cfg.json", "--sequential"]);
    let many = dbexp(t.path(), &["--out-dir", "many", "--threads", "3", "simulate", "--config", "cfg.json"]);
    assert_eq!(code(&one), 0);
    assert_eq!(code(&many), 0);
    for f in ["metrics.csv", "replications.csv"] {
        assert_eq!(fs::read(t.path().join("one").join(f)).unwrap(), fs::read(t.path().join("many").join(f)).unwrap());
    }
}

#[test]
fn empty_estimator_list_gives_header_only() {
    let t = TempDir::new().unwrap();
    tiny_config(t.path());
    let out = dbexp(t.path(), &["--out-dir", "e", "simulate", "--config", "cfg.json", "--estimators", ""]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&t.path().join("e/metrics.csv"));
    assert_eq!(header.len(), dbexp_core::simulation::METRICS_HEADER.len());
    assert!(rows.is_empty());
    assert!(!t.path().join("e/figure.svg").exists());
}

#[test]
fn invalid_simulation_config_exits_two() {
    let t = TempDir::new().unwrap();
    write(t.path(), "bad.json", r#"{"replications": 0}"#);
    assert_eq!(code(&dbexp(t.path(), &["--out-dir", "x", "simulate", "--config", "bad.json"])), 2);
    write(t.path(), "broken.json", "{ not json");
    assert_eq!(code(&dbexp(t.path(), &["--out-dir", "y", "simulate", "--config", "broken.json"])), 2);
}

#[test]
fn bounds_compare_verdicts() {
    let t = TempDir::new().unwrap();
    write(t.path(), "cl.csv", CLUSTERED);
    let out = dbexp(t.path(), &["--out-dir", "c", "bounds-compare", "--data", "cl.csv", "--design", "cluster:m1=2", "--methods", "cluster,as"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&t.path().join("c/comparison.csv"));
    assert_eq!(header, ["bound_a", "bound_b", "psd_verdict", "sharpnull_verdict", "min_eig", "max_eig", "eig_sum"]);
    assert_eq!(rows, vec![vec!["cluster", "as", "a_tighter", "a_tighter", &rows[0][4], &rows[0][5], &rows[0][6]]]);

    let out = dbexp(t.path(), &["--out-dir", "d", "bounds-compare", "--n", "6", "--design", "complete:n1=3", "--methods", "as,iterative", "--diagnostics"]);
    assert_eq!(code(&out), 0);
    let (_, rows) = read_csv(&t.path().join("d/comparison.csv"));
    assert_eq!(rows.len(), 1);
    assert!(["a_tighter", "b_tighter", "tie", "incomparable"].contains(&rows[0][2].as_str()));
    assert!(rows[0][4..].iter().all(|v| v.parse::<f64>().is_ok()));
    assert!(t.path().join("d/iterative_trace.csv").exists());

    let out = dbexp(t.path(), &["--out-dir", "s", "bounds-compare", "--n", "4", "--design", "complete:n1=2", "--methods", "as"]);
    assert_eq!(code(&out), 0);
    let (_, rows) = read_csv(&t.path().join("s/comparison.csv"));
    assert_eq!((rows[0][2].as_str(), rows[0][3].as_str()), ("tie", "tie"));
}

#[test]
fn iterative_non_convergence_exits_four_with_trace() {
    let t = TempDir::new().unwrap();
    let out = dbexp(t.path(), &["--out-dir", "n", "bounds-compare", "--n", "6", "--design", "complete:n1=3", "--methods", "iterative", "--max-iters", "1"]);
    assert_eq!(code(&out), 4);
    let (header, rows) = read_csv(&t.path().join("n/iterative_trace.csv"));
    assert_eq!(header, ["iteration", "min_eig"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(manifest(&t.path().join("n"))["exit_code"], 4);
}

#[test]
fn precision_test_reports() {
    let t = TempDir::new().unwrap();
    write(t.path(), "cl.csv", CLUSTERED);
    write(t.path(), "zero.json", "[0, 0, 0, 0]");
    let out = dbexp(t.path(), &["--out-dir", "z", "precision-test", "--data", "cl.csv", "--design", "cluster:m1=2", "--coef", "zero.json"]);
    assert_eq!(code(&out), 0);
    let (header, rows) = read_csv(&t.path().join("z/precision_test.csv"));
    let col = |name: &str| &rows[0][header.iter().position(|h| h == name).unwrap()];
    assert_eq!(col("degenerate"), "true");
    assert!(col("caveat").contains("such a test should only be used in retrospect"));

    write(t.path(), "long.json", "[1, 2, 3]");
    let out = dbexp(t.path(), &["--out-dir", "l", "precision-test", "--data", "cl.csv", "--design", "cluster:m1=2", "--coef", "long.json"]);
    assert_eq!(code(&out), 2);
}

/// Average the CLI's statistic over every assignment of a complete(4,2)
/// experiment and compare it with the threshold.
#[test]
fn precision_test_direction_over_the_enumeration() {
    let x = [1.0, 2.0, 4.0, 7.0];
    let (y0, y1) = ([1.0, 2.5, 3.0, 6.0], [2.0, 3.0, 4.5, 8.0]);
    let design = Design::complete(4, 2).unwrap();
    let y = StackedOutcomes::new(&y0, &y1).unwrap();
    let spec = spec_ii(&zero_center(&DMatrix::from_column_slice(4, 1, &x)));
    let helpful = b_opt(&spec, design.design_matrix().unwrap(), &y).unwrap().b;
    let harmful = &helpful * -3.0;

    let t = TempDir::new().unwrap();
    for (name, b, wants_above) in [("helpful", helpful, true), ("harmful", harmful, false)] {
        let coef = serde_json::to_string(&b.as_slice()).unwrap();
        write(t.path(), &format!("{name}.json"), &coef);
        let assignments = combinations(4, 2);
        let mut mean = 0.0;
        let mut threshold = f64::NAN;
        for (k, z) in assignments.iter().enumerate() {
            let mut csv = String::from("outcome,treatment,x\n");
            for i in 0..4 {
                let obs = if z[i] { y1[i] } else { y0[i] };
                csv.push_str(&format!("{obs},{},{}\n", u8::from(z[i]), x[i]));
            }
            write(t.path(), "d.csv", &csv);
            let dir = format!("{name}{k}");
            let out = dbexp(
                t.path(),
                &["--out-dir", &dir, "precision-test", "--data", "d.csv", "--design", "complete:n1=2", "--coef", &format!("{name}.json")],
            );
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
            let (header, rows) = read_csv(&t.path().join(&dir).join("precision_test.csv"));
            let col = |h: &str| rows[0][header.iter().position(|c| c == h).unwrap()].parse::<f64>().unwrap();
            mean += col("statistic") / assignments.len() as f64;
            threshold = col("threshold");
        }
        assert_eq!(mean > threshold, wants_above, "{name}: mean {mean} threshold {threshold}");
    }
}
