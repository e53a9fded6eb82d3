use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajstyle"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn smoke_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> String {
    let o = run(&["print-config", "--profile", "smoke"]);
    assert_eq!(code(&o), 0);
    let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
    edit(&mut v);
    let p = dir.join("run.json");
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn csv_files(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count()
}

#[test]
fn simulate_count_writes_that_many_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = run(&["simulate", "--config", "smoke", "--count", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_files(&out.join("simulate/source")), 2);
    assert!(out.join("simulate/source/manifest.json").exists());
    assert!(out.join("MANIFEST.json").exists());
    assert!(out.join("runlog/simulate.json").exists());
}

#[test]
fn simulate_rerun_is_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = run(&["simulate", "--config", "smoke", "--seed", "9", "--out", d.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for e in fs::read_dir(a.join("simulate/source")).unwrap() {
        let p = e.unwrap().path();
        let q = b.join("simulate/source").join(p.file_name().unwrap());
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap(), "{}", p.display());
    }
    assert_eq!(fs::read(a.join("MANIFEST.json")).unwrap(), fs::read(b.join("MANIFEST.json")).unwrap());
}

#[test]
fn smoke_pipeline_emits_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = run(&["run", "--config", "smoke", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    for s in ["expert", "baseline", "bc-identity", "style-transfer"] {
        assert!(text.contains(s), "{s} missing from report");
    }
    for f in ["report/report.json", "report/report.txt", "report/plot.csv", "evaluate/metrics.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("MANIFEST.json")).unwrap()).unwrap();
    let stages = manifest["stages"].as_object().unwrap();
    for s in ["simulate", "gen-target", "train-vae", "pair", "distill-expert", "transfer", "adapt", "evaluate", "report"] {
        assert!(stages.contains_key(s), "{s}");
        let log: Value = serde_json::from_slice(&fs::read(out.join(format!("runlog/{s}.json"))).unwrap()).unwrap();
        assert!(log["wall_time_s"].as_f64().unwrap() >= 0.0);
        assert_eq!(log["config_hash"], stages[s]["config_hash"]);
    }
}

#[test]
fn single_strategy_report_skips_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |v| v["eval"]["strategies"] = serde_json::json!(["baseline"]));
    let out = tmp.path().join("r");
    let o = run(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&fs::read(out.join("report/report.json")).unwrap()).unwrap();
    assert!(report["statistics"].as_array().unwrap().is_empty());
    assert!(!report["tables"].as_array().unwrap().is_empty());
    assert!(!report["notes"].as_array().unwrap().is_empty());
    // Only the stages the single strategy needs ran.
    assert!(!out.join("adapt/style-transfer").exists());
}

#[test]
fn missing_dependency_names_the_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train-vae", "--config", "smoke", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("simulate/source/manifest.json"), "{e}");
    assert!(e.contains("run the simulate stage first"), "{e}");
    let o = run(&["report", "--config", "smoke", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("evaluate/metrics.csv"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&run(&["no-such-stage"])), 1);
    assert_eq!(code(&run(&["simulate"])), 1);
    assert_eq!(code(&run(&["simulate", "--config", "/no/such/run.json"])), 1);
    assert_eq!(code(&run(&["simulate", "--config", "smoke", "--jobs", "0"])), 1);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |v| v["geometries"] = serde_json::json!([]));
    assert_eq!(code(&run(&["simulate", "--config", &cfg, "--out", tmp.path().to_str().unwrap()])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn divergent_training_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |v| v["vae_train"]["lr"] = serde_json::json!(1e12));
    let out = tmp.path().join("r");
    let o = run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["train-vae", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn mixing_configs_warns_about_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = run(&["simulate", "--config", "smoke", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let o = run(&["gen-target", "--config", "smoke", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let o = run(&["train-vae", "--config", "smoke", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("config-hash mismatch"));
    let log: Value = serde_json::from_slice(&fs::read(out.join("runlog/train-vae.json")).unwrap()).unwrap();
    let w = log["warnings"].as_array().unwrap();
    assert_eq!(w.len(), 1);
    assert!(w[0].as_str().unwrap().contains("simulate"));
}

#[test]
fn grad_check_reports_every_op() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["grad-check", "--config", "smoke", "--trials", "3", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    for op in ["conv1d", "batchnorm-train", "elbo", "style-transfer", "bc-loss"] {
        assert!(text.contains(op), "{op}");
    }
    assert!(tmp.path().join("grad-check/results.json").exists());
}

#[test]
fn sweep_weights_writes_the_trade_off_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config(tmp.path(), |v| v["transfer"]["iterations"] = serde_json::json!(20));
    let out = tmp.path().join("r");
    for stage in ["simulate", "gen-target", "train-vae", "pair", "sweep-weights"] {
        let o = run(&[stage, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
    }
    let table = fs::read_to_string(out.join("sweep-weights/sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
}
