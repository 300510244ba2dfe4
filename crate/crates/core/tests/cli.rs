use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use active_inference::cli::main_with_args;
use rand::Rng;
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["active-inference"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = p(dir, name);
    fs::write(&path, text).unwrap();
    path
}

// Data rows only, without the `#` preamble.
fn body(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn two_point(dir: &TempDir) -> (PathBuf, PathBuf, PathBuf) {
    (
        write(dir, "pool.csv", "x0,f,err\n0,1,1\n1,3,1\n"),
        write(dir, "plan.csv", "index,pi,xi\n0,0.5,1\n1,1.0,1\n"),
        write(dir, "labels.csv", "index,y\n0,2\n1,4\n"),
    )
}

fn binary_pool(dir: &TempDir, n: usize) -> (PathBuf, PathBuf) {
    let mut rng = active_inference::data::RngSpec::new(1, 0).rng();
    let mut pool = String::from("x0,f,err\n");
    let mut labels = String::from("index,y\n");
    for i in 0..n {
        let x: f64 = rng.random_range(-1.0..1.0);
        let f = 1.0 / (1.0 + (-2.0 * x).exp());
        let y = if rng.random::<f64>() < f { 1 } else { 0 };
        pool.push_str(&format!("{x},{f},{}\n", (f * (1.0 - f)).sqrt()));
        labels.push_str(&format!("{i},{y}\n"));
    }
    (write(dir, "bpool.csv", &pool), write(dir, "blabels.csv", &labels))
}

#[test]
fn infer_two_point_example() {
    let dir = TempDir::new().unwrap();
    let (pool, plan, labels) = two_point(&dir);
    let out = p(&dir, "r.csv");
    assert_eq!(run(&["infer", "--pool", s(&pool), "--plan", s(&plan), "--labels", s(&labels), "--out", s(&out)]), 0);
    let rows = body(&out);
    assert_eq!(rows[0], ["method", "coordinate", "estimate", "lo", "hi", "n", "n_lab", "alpha"]);
    assert_eq!(rows[1][0], "active");
    assert!((rows[1][2].parse::<f64>().unwrap() - 3.5).abs() < 1e-12);
}

#[test]
fn every_output_starts_with_hash_and_seed() {
    let dir = TempDir::new().unwrap();
    let (pool, plan, labels) = two_point(&dir);
    let out = p(&dir, "r.csv");
    run(&["infer", "--pool", s(&pool), "--plan", s(&plan), "--labels", s(&labels), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let first = text.lines().next().unwrap();
    let hash = first.strip_prefix("# config_hash=").unwrap();
    let (hex, seed) = hash.split_once(' ').unwrap();
    assert_eq!(hex.len(), 64);
    assert!(hex.bytes().all(|b| b.is_ascii_hexdigit()));
    assert_eq!(seed, "seed=0");
    assert!(text.lines().nth(1).unwrap().starts_with("# config"));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = TempDir::new().unwrap();
    let (pool, plan, _) = two_point(&dir);
    let missing = write(&dir, "missing.csv", "index,y\n1,4\n");
    let base = ["infer", "--pool", s(&pool), "--plan", s(&plan), "--labels"];
    let mut args = base.to_vec();
    args.push(s(&missing));
    assert_eq!(run(&args), 3);

    let labels = write(&dir, "ok.csv", "index,y\n0,2\n1,4\n");
    let mut args = base.to_vec();
    args.extend([s(&labels), "--alpha", "7"]);
    assert_eq!(run(&args), 2);

    assert_eq!(run(&["--set", "no_such_key=1", "infer", "--pool", s(&pool), "--plan", s(&plan), "--labels", s(&labels)]), 2);
    assert_eq!(run(&["frobnicate"]), 2);

    let bad_cfg = write(&dir, "bad.cfg", "alpha = 0.1\nalpha = 0.2\n");
    assert_eq!(run(&["--config", s(&bad_cfg), "infer", "--pool", s(&pool), "--plan", s(&plan), "--labels", s(&labels)]), 2);
}

#[test]
fn smaller_alpha_gives_wider_interval_and_betting_is_wider() {
    let dir = TempDir::new().unwrap();
    let (pool, labels) = binary_pool(&dir, 1000);
    let plan = p(&dir, "plan.csv");
    assert_eq!(run(&["plan", "--pool", s(&pool), "--out", s(&plan), "--n-b", "300", "--seed", "2"]), 0);
    let width = |alpha: &str, extra: &[&str]| {
        let out = p(&dir, &format!("r{alpha}{}.csv", extra.len()));
        let mut args = vec!["infer", "--pool", s(&pool), "--plan", s(&plan), "--labels", s(&labels), "--out", s(&out), "--alpha", alpha];
        args.extend_from_slice(extra);
        assert_eq!(run(&args), 0);
        body(&out)[1..]
            .iter()
            .map(|r| r[4].parse::<f64>().unwrap() - r[3].parse::<f64>().unwrap())
            .collect::<Vec<_>>()
    };
    assert!(width("0.2", &[])[0] < width("0.1", &[])[0]);
    let both = width("0.1", &["--nonasymptotic", "--set", "y_lo=0", "--set", "y_hi=1"]);
    assert_eq!(both.len(), 2);
    assert!(both[1] > both[0]);
    let out = p(&dir, "nb.csv");
    let code = run(&["infer", "--pool", s(&pool), "--plan", s(&plan), "--labels", s(&labels), "--out", s(&out), "--nonasymptotic"]);
    assert_eq!(code, 2);
}

#[test]
fn plan_is_deterministic_and_within_budget() {
    let dir = TempDir::new().unwrap();
    let (pool, _) = binary_pool(&dir, 800);
    let (a, b, c) = (p(&dir, "a.csv"), p(&dir, "b.csv"), p(&dir, "c.csv"));
    for out in [&a, &b] {
        assert_eq!(run(&["plan", "--pool", s(&pool), "--out", s(out), "--n-b", "120", "--seed", "5"]), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    run(&["plan", "--pool", s(&pool), "--out", s(&c), "--n-b", "120", "--seed", "6"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let rows = body(&a);
    assert_eq!(rows[0], ["index", "pi", "xi"]);
    let total: f64 = rows[1..].iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!(total <= 120.0 * (1.0 + 1e-9));
    assert_eq!(rows.len() - 1, 800);
}

#[test]
fn zero_uncertainty_falls_back_to_uniform() {
    let dir = TempDir::new().unwrap();
    let pool = write(&dir, "zero.csv", "x0,f,err\n0,1,0\n1,3,0\n2,2,0\n3,1,0\n");
    let out = p(&dir, "plan.csv");
    assert_eq!(run(&["plan", "--pool", s(&pool), "--out", s(&out), "--n-b", "2"]), 0);
    for r in &body(&out)[1..] {
        assert!((r[1].parse::<f64>().unwrap() - 0.5).abs() < 1e-12);
    }
}

#[test]
fn simulate_smoke_is_fast_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let (d1, d2, d3) = (p(&dir, "s1"), p(&dir, "s2"), p(&dir, "s3"));
    let start = Instant::now();
    assert_eq!(run(&["--set", "n=500", "simulate", "--out-dir", s(&d1), "--trials", "10"]), 0);
    assert!(start.elapsed().as_secs_f64() < 10.0);
    run(&["--set", "n=500", "simulate", "--out-dir", s(&d2), "--trials", "10"]);
    run(&["--set", "n=500", "simulate", "--out-dir", s(&d3), "--trials", "10", "--threads", "3"]);
    for f in ["widths.csv", "savings.csv", "examples.csv"] {
        let a = fs::read(d1.join(f)).unwrap();
        assert_eq!(a, fs::read(d2.join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(d3.join(f)).unwrap(), "{f}");
    }
    let widths = body(&d1.join("widths.csv"));
    assert_eq!(&widths[0][..4], ["method", "n_b", "mean_width", "coverage"]);
    let methods: std::collections::BTreeSet<&str> = widths[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["active", "classical", "ppi"].into_iter().collect());
    assert_eq!(&body(&d1.join("savings.csv"))[0][..3], ["baseline", "n_b", "save_pct"]);
    assert_eq!(body(&d1.join("examples.csv"))[0], ["trial", "method", "estimate", "lo", "hi"]);

    let saved = p(&dir, "again.csv");
    let widths_path = d1.join("widths.csv");
    assert_eq!(run(&["budget-save", "--widths", s(&widths_path), "--out", s(&saved)]), 0);
    assert_eq!(body(&saved), body(&d1.join("savings.csv")));
}

#[test]
fn sequential_writes_trace_and_report() {
    let dir = TempDir::new().unwrap();
    let (pool, labels) = binary_pool(&dir, 1000);
    let (trace, report) = (p(&dir, "trace.csv"), p(&dir, "rep.csv"));
    let code = run(&[
        "--set", "model=logistic", "--set", "batch_size=50", "sequential", "--pool", s(&pool), "--labels", s(&labels),
        "--out", s(&trace), "--report", s(&report), "--n-b", "150", "--seed", "4",
    ]);
    assert_eq!(code, 0);
    let rows = body(&trace);
    assert_eq!(rows.len() - 1, 1000);
    assert!(rows[0].starts_with(&["t".to_string(), "f".to_string()]));
    let rep = body(&report);
    let (lo, hi): (f64, f64) = (rep[1][3].parse().unwrap(), rep[1][4].parse().unwrap());
    assert!(lo < hi);

    let partial = write(&dir, "few.csv", "index,y\n0,1\n");
    let t2 = p(&dir, "t2.csv");
    let code = run(&["sequential", "--pool", s(&pool), "--labels", s(&partial), "--out", s(&t2), "--n-b", "900"]);
    assert_eq!(code, 3);
    assert!(body(&t2).len() > 1);
}
