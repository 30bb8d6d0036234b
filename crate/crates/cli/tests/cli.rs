use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
schema_version = 1
name = "small"
seed = 5

[grid]
width = 6
height = 5
excluded_count = 4
periods = 2

[fleet]
vehicles = 5
"#;

fn quids(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_quids"));
    cmd.current_dir(dir).args(args).env_remove("QUIDS_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn record(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn no_actuation_run_spends_nothing() {
    let dir = setup();
    let out = quids(
        dir.path(),
        &[
            "run",
            "--config",
            "small.toml",
            "--dispatcher",
            "na",
            "--out",
            "r",
            "--self-check",
        ],
        &[],
    );
    let rec = record(&out);
    assert_eq!(rec["spend"], 0.0);
    assert_eq!(rec["dispatcher"], "na");
    let id = rec["run_id"].as_str().unwrap();
    for suffix in [
        ".json",
        ".plans.json",
        ".ledger.jsonl",
        ".readings.csv",
        ".reconstruction.csv",
    ] {
        assert!(dir.path().join("r").join(format!("{id}{suffix}")).exists(), "{suffix}");
    }
}

#[test]
fn repeated_runs_match_except_wall_time() {
    let dir = setup();
    let args = ["run", "--config", "small.toml", "--out", "r", "--self-check"];
    let mut a = record(&quids(dir.path(), &args, &[]));
    let mut b = record(&quids(dir.path(), &args, &[]));
    a["wall_time_ms"] = Value::Null;
    b["wall_time_ms"] = Value::Null;
    assert_eq!(a, b);
}

#[test]
fn seed_precedence() {
    let dir = setup();
    let base = ["run", "--config", "small.toml", "--dispatcher", "na", "--out", "r"];
    assert_eq!(record(&quids(dir.path(), &base, &[]))["seed"], 5);
    assert_eq!(record(&quids(dir.path(), &base, &[("QUIDS_SEED", "9")]))["seed"], 9);
    let mut flagged = base.to_vec();
    flagged.extend(["--seed", "11"]);
    assert_eq!(record(&quids(dir.path(), &flagged, &[("QUIDS_SEED", "9")]))["seed"], 11);
}

#[test]
fn config_errors_exit_with_two_and_name_the_field() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "schema_version = 1\n[grid]\nwidth = 0\n").unwrap();
    let out = quids(dir.path(), &["run", "--config", "bad.toml"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.width"));

    let out = quids(dir.path(), &["run", "--config", "missing.toml"], &[]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(
        dir.path().join("sweep.toml"),
        "name = \"s\"\ndimension = \"budget\"\nvalues = []\n",
    )
    .unwrap();
    let out = quids(dir.path(), &["sweep", "--config", "sweep.toml"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("values"));
}

#[test]
fn sweep_then_correlate() {
    let dir = setup();
    let spec = format!(
        "name = \"budget\"\ndimension = \"budget\"\nvalues = [0.0, 40.0, 100.0]\nrepetitions = 1\n\n[base]\n{}",
        SMALL
            .lines()
            .map(|l| if l.starts_with('[') {
                format!("[base.{}", &l[1..])
            } else {
                l.to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    );
    fs::write(dir.path().join("sweep.toml"), spec).unwrap();
    let out = quids(
        dir.path(),
        &[
            "sweep",
            "--config",
            "sweep.toml",
            "--out",
            "res",
            "--jobs",
            "2",
            "--self-check",
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = dir.path().join("res/budget/results.csv");
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().count(), 1 + 12);
    let header = text.lines().next().unwrap();
    for column in [
        "dimension",
        "value",
        "dispatcher",
        "seed",
        "budget",
        "asq",
        "r_rmse_idw",
        "error",
    ] {
        assert!(header.split(',').any(|h| h == column), "{column}");
    }
    let jsons = fs::read_dir(dir.path().join("res/budget"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count();
    assert_eq!(jsons, 12);

    let out = quids(dir.path(), &["correlate", "--input", "res/budget/results.csv"], &[]);
    let report = record(&out);
    assert_eq!(report["runs"], 12);
    assert!(report["spearman"].get("idw").is_some());
    assert!(report["spearman"].get("kernel").is_some());

    let out = quids(dir.path(), &["correlate", "--input", "res/budget"], &[]);
    assert_eq!(record(&out)["runs"], 12);
}

#[test]
fn correlate_needs_ten_runs() {
    let dir = setup();
    let out = quids(
        dir.path(),
        &["run", "--config", "small.toml", "--dispatcher", "na", "--out", "r"],
        &[],
    );
    assert!(out.status.success());
    let out = quids(dir.path(), &["correlate", "--input", "r"], &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn truthdisc_reports_weights_and_biases() {
    let dir = setup();
    fs::write(
        dir.path().join("readings.csv"),
        "sensor_id,t,x,y,value\n0,1,1,1,50\n1,1,1,1,52\n2,1,1,1,57\n0,2,2,1,40\n1,2,2,1,41\n2,2,2,1,49\n",
    )
    .unwrap();
    let out = quids(dir.path(), &["truthdisc", "--readings", "readings.csv"], &[]);
    let rep = record(&out);
    let w: Vec<f64> = serde_json::from_value(rep["w"].clone()).unwrap();
    let b: Vec<f64> = serde_json::from_value(rep["b"].clone()).unwrap();
    assert_eq!(w.len(), 3);
    assert!((w.iter().map(|x| (-x).exp()).sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(b.iter().sum::<f64>().abs() < 1e-9);
    assert!(rep["objective_trace"].as_array().is_some_and(|t| !t.is_empty()));

    fs::write(dir.path().join("bad.csv"), "sensor_id,t,x,y,value\n0,1,0,1,50\n").unwrap();
    let out = quids(dir.path(), &["truthdisc", "--readings", "bad.csv"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_configs_and_trajectories() {
    let dir = setup();
    let out = quids(dir.path(), &["validate", "--config", "small.toml"], &[]);
    assert!(out.status.success());

    let out = quids(
        dir.path(),
        &["gen-scenario", "--config", "small.toml", "--out", "sc"],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "scenario.toml",
        "truth.csv",
        "sensors.json",
        "candidates.csv",
        "demand.csv",
    ] {
        assert!(dir.path().join("sc").join(f).exists(), "{f}");
    }
    let out = quids(dir.path(), &["validate", "--config", "sc/scenario.toml"], &[]);
    assert!(out.status.success());

    fs::write(
        dir.path().join("traj.csv"),
        "vehicle_id,candidate_k,t,x,y\n0,0,1,1,1\n0,0,2,0,1\n",
    )
    .unwrap();
    let out = quids(
        dir.path(),
        &["validate", "--config", "small.toml", "--trajectories", "traj.csv"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}
