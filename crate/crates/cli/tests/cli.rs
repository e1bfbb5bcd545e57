use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use abht_core::load_model;
use serde_json::Value;

const SMALL: &str = "repetitions = 2
n_train = 200
n_val = 200
n_test = 500
iterations = [20, 50]
ensemble_sizes = [10, 20]
learning_rates = [0.1, 0.2]
bin_widths = [0.02, 0.05, 0.1]
";

fn abht(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abht"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_writes_headers_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&abht(d, &["--seed", "4", "gen", "--case", "a", "--n", "5"]));
    ok(&abht(d, &["--seed", "4", "gen", "--case", "b", "--n", "5"]));
    let a = fs::read_to_string(d.join("case_a.csv")).unwrap();
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "x1,y,region");
    assert_eq!(lines.len(), 6);
    let first: Vec<&str> = lines[1].split(',').collect();
    // 17 significant digits
    assert_eq!(first[0].split('e').next().unwrap().replace('.', "").len(), 17);
    let b = fs::read_to_string(d.join("case_b.csv")).unwrap();
    assert!(b.starts_with("x1,x2,y,region\n"));

    ok(&abht(d, &["--seed", "4", "gen", "--case", "a", "--n", "5", "--out", d.join("again.csv").to_str().unwrap()]));
    assert_eq!(fs::read(d.join("again.csv")).unwrap(), a.as_bytes());
}

#[test]
fn fit_then_predict_matches_the_loaded_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let train = d.join("train.csv");
    let val = d.join("val.csv");
    ok(&abht(d, &["--seed", "1", "gen", "--case", "a", "--n", "200", "--out", train.to_str().unwrap()]));
    ok(&abht(d, &["--seed", "2", "gen", "--case", "a", "--n", "200", "--out", val.to_str().unwrap()]));
    for method in ["peht", "bht", "abht"] {
        let model = d.join(format!("{method}.json"));
        ok(&abht(
            d,
            &[
                "--config",
                &cfg,
                "fit",
                "--method",
                method,
                "--train",
                train.to_str().unwrap(),
                "--val",
                val.to_str().unwrap(),
                "--out",
                model.to_str().unwrap(),
            ],
        ));
        let preds = d.join(format!("{method}_pred.csv"));
        let out = abht(
            d,
            &[
                "predict",
                "--model",
                model.to_str().unwrap(),
                "--data",
                val.to_str().unwrap(),
                "--out",
                preds.to_str().unwrap(),
            ],
        );
        ok(&out);
        assert!(String::from_utf8_lossy(&out.stdout).contains("mse "));

        let saved = load_model(&model).unwrap();
        let ds = abht_core::data::load_csv(&val, "y").unwrap();
        let text = fs::read_to_string(&preds).unwrap();
        let written: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
        assert_eq!(written.len(), ds.len());
        for (x, w) in ds.rows().iter().zip(&written) {
            assert!((saved.predict(x).unwrap() - w).abs() <= 1e-15);
        }
    }
}

#[test]
fn damaged_model_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let train = d.join("train.csv");
    ok(&abht(d, &["gen", "--case", "a", "--n", "200", "--out", train.to_str().unwrap()]));
    let model = d.join("m.json");
    ok(&abht(
        d,
        &["--config", &cfg, "fit", "--method", "bht", "--train", train.to_str().unwrap(), "--out", model.to_str().unwrap()],
    ));
    let text = fs::read_to_string(&model).unwrap();

    let mut env: Value = serde_json::from_str(&text).unwrap();
    env["payload"]["target"] = Value::from("z");
    let tampered = d.join("tampered.json");
    fs::write(&tampered, env.to_string()).unwrap();
    let out = abht(d, &["predict", "--model", tampered.to_str().unwrap(), "--data", train.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));

    let mut env: Value = serde_json::from_str(&text).unwrap();
    env["version"] = Value::from(99);
    let newer = d.join("newer.json");
    fs::write(&newer, env.to_string()).unwrap();
    let out = abht(d, &["predict", "--model", newer.to_str().unwrap(), "--data", train.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 99"));

    let b = d.join("b.csv");
    ok(&abht(d, &["gen", "--case", "b", "--n", "20", "--out", b.to_str().unwrap()]));
    let out = abht(d, &["predict", "--model", model.to_str().unwrap(), "--data", b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.toml");
    fs::write(&bad, "repetitons = 2\n").unwrap();
    let out = abht(d, &["--config", bad.to_str().unwrap(), "experiment", "--dry-run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("repetitons"));

    let missing = d.join("missing.toml");
    let out = abht(d, &["--config", missing.to_str().unwrap(), "experiment"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&bad, "learning_rates = [0.0]\n").unwrap();
    let out = abht(d, &["--config", bad.to_str().unwrap(), "experiment", "--dry-run"]);
    assert_eq!(out.status.code(), Some(2));

    let out = abht(d, &["--threads", "0", "experiment", "--dry-run"]);
    assert_eq!(out.status.code(), Some(2));

    let out = abht(d, &["predict", "--model", "nowhere.json", "--data", "nowhere.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn dry_run_plans_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = abht(d, &["--seed", "9", "experiment", "--dry-run"]);
    ok(&out);
    let plan = String::from_utf8_lossy(&out.stdout);
    assert!(plan.contains("seed: 9, repetitions: 30"));
    assert!(plan.contains("peht") && plan.contains("bht") && plan.contains("abht"));
    assert_eq!(fs::read_dir(d).unwrap().count(), 0);
}

#[test]
fn experiment_writes_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let (r1, r2) = (d.join("r1"), d.join("r2"));
    for r in [&r1, &r2] {
        ok(&abht(r, &["--config", &cfg, "--threads", "2", "--seed", "5", "experiment"]));
    }
    for name in ["peht.csv", "bht.csv", "abht.csv", "abht_raw.csv", "report.txt"] {
        let a = fs::read(r1.join(name)).unwrap();
        assert_eq!(a, fs::read(r2.join(name)).unwrap(), "{name}");
    }
    let summary = fs::read_to_string(r1.join("abht.csv")).unwrap();
    assert!(summary.starts_with("method,region,mean_mse"));
    assert!(summary.contains("abht,overall,"));
    assert!(summary.contains("abht,[0,1/8),"));
}

#[test]
fn trace_is_one_json_object_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    ok(&abht(d, &["--config", &cfg, "--seed", "3", "trace"]));
    let text = fs::read_to_string(d.join("trace.jsonl")).unwrap();
    let stages: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!stages.is_empty());
    let mut intervals = Vec::new();
    for (k, st) in stages.iter().enumerate() {
        assert_eq!(st["stage"].as_u64().unwrap() as usize, k + 1);
        for key in ["h", "rho", "iterations", "overall_mse", "region_mse", "stopped"] {
            assert!(!st[key].is_null(), "{key}");
        }
        for b in st["stopped"].as_array().unwrap() {
            intervals.push((b["lo"][0].as_f64().unwrap(), b["hi"][0].as_f64().unwrap()));
        }
    }
    for w in stages.windows(2) {
        assert!(w[1]["h"].as_f64().unwrap() <= w[0]["h"].as_f64().unwrap());
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in intervals.windows(2) {
        assert!(w[0].1 <= w[1].0);
    }
}
