use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simavg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `n` rows of `y,v1..vp` from a sine single-index model.
fn write_data(path: &Path, n: usize, p: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("y");
    for j in 1..=p {
        text.push_str(&format!(",v{j}"));
    }
    text.push('\n');
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let z = x[0] + 0.8 * x[1] - 0.5 * x[2];
        let y = (z / 2.0).sin() + 0.2 * rng.gen_range(-1.0..1.0);
        text.push_str(&format!("{y}"));
        for v in x {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn lines(path: PathBuf) -> Vec<String> {
    fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

fn fit_small(dir: &Path, data: &Path, out: &str) -> PathBuf {
    let out = dir.join(out);
    let o = run(&["fit", "--data", s(data), "--exclude", "v4", "--block-size", "20", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn enumerated_fit_writes_all_candidates() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("train.csv");
    write_data(&data, 80, 6, 1);
    let out = dir.path().join("fit");
    let o = run(&["fit", "--data", s(&data), "--exclude", "v6", "--block-size", "20", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // Anchor plus 4 uncertain covariates: 2^4 - 1 nonempty extensions.
    let w = lines(out.join("weights.csv"));
    assert_eq!(w.len(), 1 + 15);
    assert!(w[0].starts_with("candidate,"));
    assert!(out.join("fits.csv").exists());
    assert_eq!(lines(out.join("fitted.csv")).len(), 81);
    assert!(out.join("model").join("manifest.toml").exists());
}

#[test]
fn fit_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("train.csv");
    write_data(&data, 60, 4, 2);
    let a = fit_small(dir.path(), &data, "a");
    let b = fit_small(dir.path(), &data, "b");
    for f in ["weights.csv", "fits.csv", "fitted.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn correlation_screen_builds_nested_candidates() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("wide.csv");
    write_data(&data, 60, 40, 3);
    let out = dir.path().join("fit");
    let o = run(&[
        "fit", "--data", s(&data), "--screen", "correlation", "--count", "5", "--methods", "jcvma,full", "--block-size", "20",
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(out.join("weights.csv")).len(), 6);
    assert_eq!(lines(out.join("screen.csv")).len(), 6);
}

#[test]
fn in_sample_prediction_matches_fitted_values() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("train.csv");
    write_data(&data, 60, 4, 4);
    let fit = fit_small(dir.path(), &data, "fit");
    let pred = dir.path().join("pred");
    let o = run(&["predict", "--model", s(&fit), "--test", s(&data), "--out", s(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let fitted = lines(fit.join("fitted.csv"));
    let predicted = lines(pred.join("predictions.csv"));
    assert_eq!(fitted.len(), predicted.len());
    let header: Vec<&str> = fitted[0].split(',').collect();
    let pheader: Vec<&str> = predicted[0].split(',').collect();
    for method in &header[2..] {
        let fi = header.iter().position(|h| h == method).unwrap();
        let pi = pheader.iter().position(|h| h == method).unwrap();
        for (fr, pr) in fitted[1..].iter().zip(&predicted[1..]) {
            let a: f64 = fr.split(',').nth(fi).unwrap().parse().unwrap();
            let b: f64 = pr.split(',').nth(pi).unwrap().parse().unwrap();
            assert!((a - b).abs() < 1e-10, "{method}: {a} vs {b}");
        }
    }
    assert!(pred.join("mspe.csv").exists());
}

#[test]
fn header_only_test_file_predicts_nothing() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("train.csv");
    write_data(&data, 60, 4, 5);
    let fit = fit_small(dir.path(), &data, "fit");
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "v1,v2,v3,v4\n").unwrap();
    let pred = dir.path().join("pred");
    let o = run(&["predict", "--model", s(&fit), "--test", s(&empty), "--out", s(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(pred.join("predictions.csv")).len(), 1);
}

#[test]
fn missing_covariate_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("train.csv");
    write_data(&data, 60, 4, 6);
    let fit = fit_small(dir.path(), &data, "fit");
    let test = dir.path().join("test.csv");
    fs::write(&test, "v1,v2,v3\n0.1,0.2,0.3\n").unwrap();
    let o = run(&["predict", "--model", s(&fit), "--test", s(&test), "--out", s(&dir.path().join("p"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("v4"));
}

#[test]
fn malformed_csv_reports_position() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "y,v1,v2\n1,2,3\n1,abc,3\n").unwrap();
    let o = run(&["fit", "--data", s(&data), "--out", s(&dir.path().join("f"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("column 2"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("train.csv");
    write_data(&data, 40, 3, 7);
    let out = dir.path().join("f");
    let cases: [&[&str]; 3] = [
        &["fit", "--data", s(&data), "--methods", "mallows", "--out", s(&out)],
        &["fit", "--data", s(&data), "--block-size", "1", "--out", s(&out)],
        &["simulate", "--preset", "nope", "--out", s(&out)],
    ];
    for args in cases {
        assert_eq!(run(args).status.code(), Some(2), "{args:?}");
    }
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "situations = [\"9\"]\nn = [100]\nr_squared = [0.5]\nreplications = 1\n").unwrap();
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_smoke_preset() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let o = run(&["simulate", "--preset", "smoke", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 5 replications of 8 methods.
    assert_eq!(lines(out.join("replications.csv")).len(), 1 + 40);
    assert_eq!(lines(out.join("aggregate.csv")).len(), 1 + 8);
}

#[test]
fn time_split_normalizes_by_full_model() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("series.csv");
    write_data(&data, 120, 3, 8);
    let out = dir.path().join("ts");
    let o = run(&["time-split", "--data", s(&data), "--fractions", "0.7,0.8", "--block-size", "20", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = lines(out.join("mspe.csv"));
    let full: Vec<&String> = rows.iter().filter(|r| r.starts_with("full,")).collect();
    assert_eq!(full.len(), 2);
    for r in full {
        let normalized: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(normalized, 1.0);
    }
}
