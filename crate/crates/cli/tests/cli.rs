use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::Command;

use caafp_cli::{run_cli_with, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use caafp_core::metrics::{read_rows, ResultRow};

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("caafp").chain(args.iter().copied());
    let code = run_cli_with(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn rows(path: &Path) -> Vec<ResultRow> {
    read_rows(fs::File::open(path).unwrap()).unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn row(method: &str, seed: u64, mu: f64) -> String {
    format!("{method},synth,standard,{seed},final,{mu},0.01,0.7,1.5\n")
}

#[test]
fn run_writes_rows_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, stdout, stderr) = cli(&[
        "run",
        "--preset",
        "desk",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stdout.contains("caafp synth standard seed 3"), "{stdout}");

    let rows = rows(&out.join("results.csv"));
    let finals: Vec<_> = rows.iter().filter(|r| r.is_final()).collect();
    assert_eq!(finals.len(), 1);
    assert!((finals[0].sparsity - 0.7).abs() < 0.01);

    let m = manifest(&out);
    let run = &m["runs"][0];
    assert_eq!(run["seed"], 3);
    assert_eq!(run["method"], "caafp");
    assert_eq!(run["config_hash"].as_str().unwrap().len(), 16);
    assert!(run["params_prunable"].as_u64().unwrap() < run["params_total"].as_u64().unwrap());
    assert!(!run["prune_steps"].as_array().unwrap().is_empty());
}

#[test]
fn dry_run_prints_config_without_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dry");
    let (code, stdout, _) = cli(&[
        "run",
        "--preset",
        "desk",
        "--set",
        "lambda=0.25",
        "--dry-run",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("lambda = 0.25"), "{stdout}");
    assert!(!out.join("results.csv").exists());
}

#[test]
fn checkpoint_resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let resumed = dir.path().join("resumed");
    let ckpt = dir.path().join("state.json");
    let base = ["run", "--preset", "desk", "--seed", "4"];

    let mut args = base.to_vec();
    args.extend(["--out", straight.to_str().unwrap()]);
    assert_eq!(cli(&args).0, EXIT_OK);

    let mut args = base.to_vec();
    args.extend([
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--stop-after",
        "7",
        "--out",
        resumed.to_str().unwrap(),
    ]);
    let (code, stdout, _) = cli(&args);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.starts_with("stopped after 7 rounds"), "{stdout}");
    assert!(ckpt.exists());
    assert!(!resumed.join("results.csv").exists());

    let (code, _, stderr) = cli(&[
        "run",
        "--resume",
        ckpt.to_str().unwrap(),
        "--out",
        resumed.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert_eq!(
        fs::read(straight.join("results.csv")).unwrap(),
        fs::read(resumed.join("results.csv")).unwrap()
    );
}

#[test]
fn ablation_sweep_covers_seven_weightings_per_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let (code, _, stderr) = cli(&[
        "sweep",
        "--preset",
        "desk",
        "--set",
        "phases.p4=0",
        "--weights-grid",
        "ablation",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    let finals = rows(&out.join("final.csv"));
    assert_eq!(finals.len(), 21);
    let scenarios: HashSet<_> = finals.iter().map(|r| r.scenario.as_str()).collect();
    assert_eq!(
        scenarios,
        HashSet::from(["standard", "noisy-clients", "drift"])
    );
    let labels: HashSet<_> = finals.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(labels.len(), 7);

    let m = manifest(&out);
    let keys: HashSet<(String, u64, String)> = m["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                r["method"].as_str().unwrap().to_string(),
                r["seed"].as_u64().unwrap(),
                r["config_hash"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    assert_eq!(keys.len(), 21);
}

#[test]
fn sweep_over_methods_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let (code, stdout, stderr) = cli(&[
        "sweep",
        "--preset",
        "desk",
        "--methods",
        "caafp,dense-clustered",
        "--seeds",
        "1,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert_eq!(stdout.lines().count(), 4);
    let finals = rows(&out.join("final.csv"));
    assert_eq!(finals.len(), 4);
    let dense: Vec<_> = finals
        .iter()
        .filter(|r| r.method == "dense-clustered")
        .collect();
    assert!(dense.iter().all(|r| r.sparsity == 0.0));

    let (code, table, _) = cli(&["report", out.join("final.csv").to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(table.lines().count(), 3, "{table}");
}

#[test]
fn report_aggregates_five_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    let mut text = String::from("method,dataset,scenario,seed,round,mu,sigma,sparsity,comm_mb\n");
    for (seed, mu) in [0.93, 0.94, 0.95, 0.96, 0.97].into_iter().enumerate() {
        text += &row("caafp", seed as u64, mu);
    }
    text += "caafp,synth,standard,0,3,0.5,0.1,0.7,1.0\n";
    fs::write(&path, text).unwrap();

    let (code, json, stderr) = cli(&["report", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    let table: serde_json::Value = serde_json::from_str(&json).unwrap();
    let entry = &table[0];
    assert_eq!(entry["runs"], 5);
    assert!((entry["mu"]["mean"].as_f64().unwrap() - 0.95).abs() < 1e-12);
    assert!((entry["mu"]["std"].as_f64().unwrap() - 0.0002f64.sqrt()).abs() < 1e-12);

    let (code, csv, _) = cli(&["report", path.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("method,dataset,scenario,runs,mu_mean"));
}

#[test]
fn validate_data_reports_counts() {
    let (code, stdout, stderr) = cli(&["validate-data", "--dataset", "synth"]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stdout.contains("dataset: synth"));
    assert!(stdout.contains("clients: "));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wisdm.txt");
    let mut text = String::from("1,Walking,0,bad;\n");
    for user in [7, 9] {
        for i in 0..300 {
            text += &format!("{user},Jogging,{i},{}.0,0.5,-1.0;\n", i % 5);
        }
    }
    fs::write(&path, text).unwrap();
    let (code, stdout, stderr) = cli(&[
        "validate-data",
        "--dataset",
        "wisdm",
        "--path",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stdout.contains("clients: 2"), "{stdout}");
    assert!(stdout.contains("samples: 4"), "{stdout}");
    assert!(stdout.contains("malformed records skipped: 1"), "{stdout}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&["run", "--no-such-flag"]).0, EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(
        cli(&["run", "--method", "magic", "--dry-run"]).0,
        EXIT_USAGE
    );
    assert_eq!(cli(&["run", "--set", "bogus=1", "--dry-run"]).0, EXIT_USAGE);
    let (code, _, stderr) = cli(&[
        "run",
        "--preset",
        "desk",
        "--target-sparsity",
        "1.5",
        "--dry-run",
    ]);
    assert_eq!(code, EXIT_USAGE, "{stderr}");
    assert!(!stderr.is_empty());
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.txt");
    assert_eq!(
        cli(&[
            "validate-data",
            "--dataset",
            "wisdm",
            "--path",
            missing.to_str().unwrap()
        ])
        .0,
        EXIT_DATA
    );
    assert_eq!(cli(&["report", missing.to_str().unwrap()]).0, EXIT_DATA);
    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "method,seed\nx,notanumber\n").unwrap();
    assert_eq!(cli(&["report", garbage.to_str().unwrap()]).0, EXIT_DATA);
}

#[test]
fn help_and_oracle_exit_zero() {
    let (code, stdout, _) = cli(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("sweep"));
    let (code, stdout, _) = cli(&["oracle"]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn binary_uses_same_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_caafp");
    let status = Command::new(bin).arg("--bogus").status().unwrap();
    assert_eq!(status.code(), Some(EXIT_USAGE));
    let status = Command::new(bin)
        .args([
            "validate-data",
            "--dataset",
            "ucihar",
            "--path",
            "/nonexistent/uci",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_DATA));
}
