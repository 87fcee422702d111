use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfglobal::persist::{load_reference, load_triplet};
use mfglobal::planted;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfglobal"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

/// Writes a planted instance as 1-based `user item rating` lines and
/// returns the training and test paths.
fn write_planted(dir: &Path, m: usize, n: usize, rank: usize, seed: u64) -> (PathBuf, PathBuf) {
    let p = planted::<f64>(m, n, rank, 0.4, 0.05, seed).unwrap();
    let dump = |set: &mfglobal::Observations, name: &str| {
        let mut s = String::new();
        for (i, j, v) in set.iter() {
            s.push_str(&format!("{}\t{}\t{v}\n", i + 1, j + 1));
        }
        let path = dir.join(name);
        fs::write(&path, s).unwrap();
        path
    };
    (dump(&p.train, "train.tsv"), dump(p.test.entries(), "test.tsv"))
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn solve_with_only_data_and_lambda() {
    let dir = TempDir::new().unwrap();
    let (train, _) = write_planted(dir.path(), 15, 20, 2, 1);
    let out = run(dir.path(), &["solve", "--data", train.to_str().unwrap(), "--lambda", "1"]);
    assert!(out.status.success(), "{}", text(&out));
    let rows = csv_rows(&dir.path().join("trace.csv"));
    assert_eq!(rows[0].join(","), "iter,time_s,obj,rel_obj,rank,rmse,rel_rmse,alpha,backtracks,eps_target,eps_achieved,eig_sweeps,k_t");
    assert!(rows.len() > 2);
    assert!(dir.path().join("trace.ids.tsv").is_file());
}

#[test]
fn zero_iterations_give_initial_row_only() {
    let dir = TempDir::new().unwrap();
    let (train, _) = write_planted(dir.path(), 10, 12, 2, 2);
    let out = run(dir.path(), &["solve", "--data", train.to_str().unwrap(), "--lambda", "1", "--max-iters", "0", "--out", "t.csv"]);
    assert!(out.status.success(), "{}", text(&out));
    let rows = csv_rows(&dir.path().join("t.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0], "0");
}

#[test]
fn usage_and_io_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let (train, _) = write_planted(dir.path(), 10, 12, 2, 3);
    let train = train.to_str().unwrap();
    let missing = run(dir.path(), &["solve", "--data", "no/such/file.tsv", "--lambda", "1"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(text(&missing).contains("no/such/file.tsv"));
    let unknown = run(dir.path(), &["solve", "--data", train, "--frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2));
    let bad_number = run(dir.path(), &["solve", "--data", train, "--lambda", "abc"]);
    assert_eq!(bad_number.status.code(), Some(2));
    let bad_lambda = run(dir.path(), &["solve", "--data", train, "--lambda", "-1"]);
    assert_eq!(bad_lambda.status.code(), Some(2));
    let no_data = run(dir.path(), &["solve", "--lambda", "1"]);
    assert_eq!(no_data.status.code(), Some(2));
    fs::write(dir.path().join("bad.tsv"), "1 1 3\n1 x 2\n").unwrap();
    let parse = run(dir.path(), &["solve", "--data", "bad.tsv"]);
    assert_eq!(parse.status.code(), Some(2));
    assert!(text(&parse).contains("line 2"), "{}", text(&parse));
}

#[test]
fn traces_are_byte_identical_without_time() {
    let dir = TempDir::new().unwrap();
    let (train, test) = write_planted(dir.path(), 20, 25, 3, 4);
    let args = |out: &'static str| {
        vec!["solve", "--data", train.to_str().unwrap(), "--test", test.to_str().unwrap(), "--lambda", "0.5", "--seed", "7", "--no-time", "--out", out]
            .into_iter()
            .map(str::to_owned)
            .collect::<Vec<_>>()
    };
    for out in ["a.csv", "b.csv"] {
        let o = bin().current_dir(dir.path()).args(args(out)).output().unwrap();
        assert!(o.status.success(), "{}", text(&o));
    }
    let (a, b) = (fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(a, b);
    let rows = csv_rows(&dir.path().join("a.csv"));
    assert!(rows[1..].iter().all(|r| r[1] == "0"));
    assert!(rows.last().unwrap()[5] != "NaN");
}

#[test]
fn config_file_is_overridden_by_command_line() {
    let dir = TempDir::new().unwrap();
    let (train, _) = write_planted(dir.path(), 12, 14, 2, 5);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("# comment\ndata = {}\nlambda=1\nmax-iters=0\nno-time=true\nout=from_cfg.csv\n", train.display())).unwrap();
    let out = run(dir.path(), &["solve", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(csv_rows(&dir.path().join("from_cfg.csv")).len(), 2);
    let out = run(dir.path(), &["solve", "--config", cfg.to_str().unwrap(), "--max-iters", "2"]);
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(csv_rows(&dir.path().join("from_cfg.csv")).len(), 4);
    fs::write(&cfg, "lambda 3\n").unwrap();
    assert_eq!(run(dir.path(), &["solve", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn compare_writes_aligned_traces_and_summary() {
    let dir = TempDir::new().unwrap();
    let (train, test) = write_planted(dir.path(), 30, 36, 4, 6);
    let out = run(
        dir.path(),
        &[
            "compare", "--data", train.to_str().unwrap(), "--test", test.to_str().unwrap(), "--lambda", "0.5", "--rank", "2", "--solvers",
            "mf-global,mf-only", "--out-dir", "cmp", "--no-time",
        ],
    );
    assert!(out.status.success(), "{}", text(&out));
    let cmp = dir.path().join("cmp");
    for f in ["mf-global.csv", "mf-only.csv", "aligned.csv", "summary.csv", "ids.tsv"] {
        assert!(cmp.join(f).is_file(), "{f} missing");
    }
    let summary = csv_rows(&cmp.join("summary.csv"));
    let rel = |name: &str| summary.iter().find(|r| r[0] == name).unwrap()[3].parse::<f64>().unwrap();
    assert!(rel("mf-global") <= rel("mf-only"));
    assert_eq!(rel("mf-global"), 0.0);
    let aligned = csv_rows(&cmp.join("aligned.csv"));
    assert_eq!(aligned[0].len(), 7);
    assert!(aligned.iter().skip(1).all(|r| r.len() == 7));
    assert!(text(&out).contains("mf-global"));
}

#[test]
fn compare_single_solver_matches_solve() {
    let dir = TempDir::new().unwrap();
    let (train, _) = write_planted(dir.path(), 15, 18, 2, 7);
    let t = train.to_str().unwrap();
    assert!(run(dir.path(), &["compare", "--data", t, "--lambda", "1", "--solvers", "mf-global", "--out-dir", "c", "--no-time"]).status.success());
    assert!(run(dir.path(), &["solve", "--data", t, "--lambda", "1", "--out", "s.csv", "--no-time"]).status.success());
    let (c, s) = (csv_rows(&dir.path().join("c/mf-global.csv")), csv_rows(&dir.path().join("s.csv")));
    assert_eq!(c.len(), s.len());
    for (a, b) in c.iter().zip(&s) {
        // identical apart from the relative objective, which compare fills in
        assert_eq!(a[2], b[2]);
        assert_eq!(a[4], b[4]);
    }
}

#[test]
fn compare_without_solvers_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let (train, _) = write_planted(dir.path(), 10, 12, 2, 8);
    let out = run(dir.path(), &["compare", "--data", train.to_str().unwrap(), "--solvers", ""]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}

#[test]
fn make_reference_is_deterministic_and_feeds_relative_metrics() {
    let dir = TempDir::new().unwrap();
    let (train, test) = write_planted(dir.path(), 20, 24, 3, 9);
    let (t, e) = (train.to_str().unwrap(), test.to_str().unwrap());
    for name in ["r1.bin", "r2.bin"] {
        let out = run(dir.path(), &["make-reference", "--data", t, "--test", e, "--lambda", "0.5", "--tol", "1e-10", "--out", name]);
        assert!(out.status.success(), "{}", text(&out));
    }
    assert_eq!(fs::read(dir.path().join("r1.bin")).unwrap(), fs::read(dir.path().join("r2.bin")).unwrap());
    let r = load_reference::<f64>(dir.path().join("r1.bin")).unwrap();
    assert!(r.rmse_star.is_some() && r.rmse_zero.is_some());
    assert_eq!(r.lambda, 0.5);

    let out = run(dir.path(), &["solve", "--data", t, "--test", e, "--lambda", "0.5", "--reference", "r1.bin", "--out", "rel.csv", "--save-model", "x.bin"]);
    assert!(out.status.success(), "{}", text(&out));
    let rows = csv_rows(&dir.path().join("rel.csv"));
    let last = rows.last().unwrap();
    let rel_obj: f64 = last[3].parse().unwrap();
    let rel_rmse: f64 = last[6].parse().unwrap();
    assert!(rel_obj.abs() < 1e-5, "{rel_obj}");
    assert!(rel_rmse.is_finite());
    let first: f64 = rows[1][3].parse().unwrap();
    assert!(first > rel_obj);
    let x = load_triplet::<f64>(dir.path().join("x.bin")).unwrap();
    assert_eq!((x.nrows(), x.ncols()), (20, 24));
}

#[test]
fn over_regularized_reference_is_zero() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("tiny.tsv"), "1 1 1\n1 2 -1\n2 1 0.5\n2 3 2\n3 2 1\n").unwrap();
    let out = run(dir.path(), &["make-reference", "--data", "tiny.tsv", "--lambda", "1000", "--out", "ref.bin"]);
    assert!(out.status.success(), "{}", text(&out));
    let r = load_reference::<f64>(dir.path().join("ref.bin")).unwrap();
    let f0 = 1.0 + 1.0 + 0.25 + 4.0 + 1.0;
    assert!((r.f_star - f0).abs() < 1e-12, "{}", r.f_star);
    assert_eq!(r.x.rank(), 0);
}

#[test]
fn pg_and_power_options_run() {
    let dir = TempDir::new().unwrap();
    let (train, _) = write_planted(dir.path(), 12, 15, 2, 10);
    let out = run(
        dir.path(),
        &["solve", "--data", train.to_str().unwrap(), "--lambda", "1", "--solver", "pg", "--eig", "power", "--bb-rule", "as-printed", "--out", "pg.csv"],
    );
    assert!(out.status.success(), "{}", text(&out));
    let out = run(dir.path(), &["solve", "--data", train.to_str().unwrap(), "--lambda", "1", "--solver", "mf-only", "--rank", "3", "--out", "mo.csv"]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(csv_rows(&dir.path().join("mo.csv")).iter().skip(1).all(|r| r[4] == "3"));
}
