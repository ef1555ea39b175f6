use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

const SMALL: [&str; 4] = ["--zones", "3", "--epochs", "3"];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hvac-dfl"));
    for k in ["DFLHVAC_CONFIG", "DFLHVAC_SEED", "DFLHVAC_OUT", "DFLHVAC_ZONES", "DFLHVAC_EPOCHS"] {
        c.env_remove(k);
    }
    c.env("RUST_LOG", "error");
    c
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn ok(out: &Path, args: &[&str]) {
    let o = run(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

/// Every file under `root` keyed by its relative path.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let key = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(key, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Per-split tables carry wall time; the JSON reports do not.
fn timed(key: &str) -> bool {
    key.ends_with("table.csv") || (key.starts_with("metrics/") && key.ends_with(".csv"))
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[test]
fn full_run_is_byte_identical_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(out, &["full-run", "--config", "default", "--seed", "7"]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    for metric in ["metrics/ito.json", "metrics/dfl.json"] {
        assert!(ta.contains_key(metric));
        assert_eq!(ta[metric], tb[metric], "{metric}");
    }
    let differing: Vec<&String> = ta
        .keys()
        .filter(|k| *k != "manifest.json" && !timed(k) && ta.get(*k) != tb.get(*k))
        .collect();
    assert!(differing.is_empty(), "{differing:?}");
    assert_eq!(ta.len(), tb.len());
}

#[test]
fn stages_in_separate_processes_match_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let (staged, whole) = (dir.path().join("staged"), dir.path().join("whole"));
    let stages: [&[&str]; 8] = [
        &["synth-weather"],
        &["cluster"],
        &["baseline-rollout"],
        &["pretrain"],
        &["train-dfl"],
        &["evaluate", "--model", "ito"],
        &["evaluate", "--model", "dfl"],
        &["stress-hot-year"],
    ];
    for args in stages {
        ok(&staged, &[args, &SMALL[..]].concat());
    }
    ok(&whole, &[&["full-run"][..], &SMALL[..]].concat());

    let (ts, tw) = (tree(&staged), tree(&whole));
    // stress-hot-year summarizes two splits, full-run all four
    let summary = |k: &str| k == "manifest.json" || k == "verdict.json" || k.starts_with("metrics/") || timed(k);
    for (k, v) in ts.iter().filter(|(k, _)| !summary(k)) {
        assert_eq!(Some(v), tw.get(k), "{k}");
    }
    assert!(ts.contains_key("stress.json") && ts.contains_key("hot-year/comparison.csv"));

    // every consumed file carries the digest its producer recorded
    let manifest: Value = serde_json::from_slice(&ts["manifest.json"]).unwrap();
    let records = manifest["stages"].as_array().unwrap();
    let mut produced: BTreeMap<String, String> = BTreeMap::new();
    for rec in records {
        for (path, digest) in rec["inputs"].as_object().unwrap() {
            assert_eq!(produced.get(path), Some(&digest.as_str().unwrap().to_string()), "{path}");
        }
        for (path, digest) in rec["outputs"].as_object().unwrap() {
            produced.insert(path.clone(), digest.as_str().unwrap().into());
        }
    }
    // the latest producer of each file matches what is on disk
    for (path, digest) in &produced {
        assert_eq!(*digest, sha(&ts[path]), "{path}");
    }
    let names: Vec<&str> = records.iter().map(|r| r["stage"].as_str().unwrap()).collect();
    for s in ["synth-weather", "cluster", "baseline-rollout", "pretrain", "train-dfl"] {
        assert!(names.contains(&s), "{names:?}");
    }
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["seeds"].as_object().unwrap().len(), 6);
}

fn daily_stats(weather_csv: &[u8]) -> Vec<(f64, f64)> {
    let temps: Vec<f64> = String::from_utf8_lossy(weather_csv)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    temps
        .chunks(24)
        .map(|d| {
            let mean = d.iter().sum::<f64>() / 24.0;
            let var = d.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 24.0;
            (mean, var)
        })
        .collect()
}

#[test]
fn clustering_keeps_the_three_extreme_days() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["synth-weather"]);
    ok(out, &["cluster", "--k", "10", "--fixed", "extremes"]);
    let t = tree(out);
    let rows: Vec<Vec<String>> = String::from_utf8_lossy(&t["medoids.csv"])
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    let fixed: Vec<usize> = rows.iter().filter(|r| r[4] == "true").map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(fixed.len(), 3);

    let stats = daily_stats(&t["weather/scheduling.csv"]);
    let by = |key: &dyn Fn(&(f64, f64)) -> f64, skip: &[usize]| {
        (0..stats.len())
            .filter(|d| !skip.contains(d))
            .max_by(|&a, &b| key(&stats[a]).total_cmp(&key(&stats[b])))
            .unwrap()
    };
    let coldest = by(&|s| -s.0, &[]);
    let hottest = by(&|s| s.0, &[coldest]);
    let variable = by(&|s| s.1, &[coldest, hottest]);
    assert_eq!(fixed, [coldest, hottest, variable]);
    let weights: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((weights - 1.0).abs() < 1e-9);

    ok(out, &["cluster", "--k", "6", "--fixed", "none"]);
    let text = std::fs::read_to_string(out.join("medoids.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(!text.contains(",true,"));
}

#[test]
fn evaluate_writes_a_hot_year_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for stage in ["synth-weather", "cluster", "baseline-rollout", "pretrain"] {
        ok(out, &[stage, "--zones", "2"]);
    }
    ok(out, &["evaluate", "--model", "ito", "--split", "hot-year", "--zones", "2"]);
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("ito/hot-year/report.json")).unwrap()).unwrap();
    assert_eq!(report["split"], "hot-year");
    assert_eq!(report["scenarios"], 10);
    assert_eq!(report["failed"], 0);
    for key in ["hier_loss", "mae", "mse", "err_mean", "err_std", "expected_cost", "expost_cost"] {
        assert!(report["weighted"][key].is_number(), "{key}");
        assert!(report["unweighted"][key].is_number(), "{key}");
    }
    let table = std::fs::read_to_string(out.join("ito/hot-year/table.csv")).unwrap();
    assert!(table.starts_with("metric,hot-year\n"));
    assert!(table.contains("\ncost_error,"));
    let traces = std::fs::read_dir(out.join("ito/hot-year")).unwrap().count();
    assert_eq!(traces, 2 + 2 * 10);
    assert!(!out.join("ito/test").exists());
}

#[test]
fn missing_inputs_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["pretrain"]);
    assert_eq!(o.status.code(), Some(4));
    let e = error_json(&o);
    assert_eq!(e["error"], "missing_input");
    assert!(e["paths"][0].as_str().unwrap().ends_with("history.json"));

    let o = run(dir.path(), &["synth-weather", "--config", "no/such.toml"]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_json(&o)["paths"][0], "no/such.toml");
}

#[test]
fn config_errors_carry_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let check = |toml: &str, field: Option<&str>| {
        std::fs::write(&cfg, toml).unwrap();
        let o = run(&dir.path().join("out"), &["synth-weather", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(3), "{toml}");
        let e = error_json(&o);
        assert_eq!(e["error"], "config");
        if let Some(f) = field {
            assert_eq!(e["field"], f);
        }
    };
    check("[cluster]\nk = 0\n", Some("cluster.k"));
    check("[train]\nsnr = -1.0\n", Some("train.snr"));
    check("[building]\nfloors = 0\n", Some("building.floors"));
    check("[tariff]\nbogus = 1\n", None);

    let o = run(dir.path(), &["cluster", "--k", "2"]);
    assert_eq!(error_json(&o)["field"], "cluster.k");
    let o = run(dir.path(), &["evaluate", "--model", "ito", "--split", "winter"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["field"], "--split");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn usage_errors_are_json_but_help_is_not() {
    let o = bin().arg("sing").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");

    let o = bin().arg("--help").output().unwrap();
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    assert!(help.contains("DFLHVAC_") && help.contains("full-run"));
}

#[test]
fn environment_overrides_config_and_flags_override_environment() {
    let dir = tempfile::tempdir().unwrap();
    let seed_of = |out: &Path| {
        let text = std::fs::read_to_string(out.join("config.toml")).unwrap();
        text.lines().find(|l| l.starts_with("seed = ")).unwrap().to_string()
    };
    let a = dir.path().join("a");
    let o = bin().env("DFLHVAC_SEED", "11").arg("synth-weather").arg("--out").arg(&a).output().unwrap();
    assert!(o.status.success());
    assert_eq!(seed_of(&a), "seed = 11");

    let b = dir.path().join("b");
    let o = bin()
        .env("DFLHVAC_SEED", "11")
        .env("DFLHVAC_OUT", &b)
        .args(["synth-weather", "--seed", "12"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(seed_of(&b), "seed = 12");
    assert_ne!(
        std::fs::read(a.join("weather/historical.csv")).unwrap(),
        std::fs::read(b.join("weather/historical.csv")).unwrap()
    );
}
