use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_guided-langevin"));
    c.env_remove("GUIDED_LANGEVIN_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "--seed", "3", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trajectory.csv", "snapshots.bin", "summary.json", "rewards.svg", "weights.svg", "eta.svg"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["diverged"], false);
    assert_eq!(summary["config"]["sampler"]["seed"], 3);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, summary["steps_executed"].as_u64().unwrap() as usize);
    let leftovers = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.'))
        .count();
    assert_eq!(leftovers, 0, "temporary files left behind");
}

#[test]
fn snapshots_can_be_disabled() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--set",
        "output.snapshot_stride=0",
        "--set",
        "output.plots=false",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!dir.path().join("snapshots.bin").exists());
    assert!(!dir.path().join("eta.svg").exists());
}

#[test]
fn out_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let o = bin()
        .args(["run", "--set", "output.plots=false"])
        .env("GUIDED_LANGEVIN_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("summary.json").is_file());
}

#[test]
fn print_config_round_trips() {
    let o = run(&["print-config", "--set", "sampler.lambda_kl=7.5"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, &text).unwrap();
    let again = run(&["print-config", "--config", path.to_str().unwrap()]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    assert!(text.contains("lambda_kl = 7.5"));
}

#[test]
fn config_errors_name_the_field() {
    let o = run(&["run", "--set", "sampler.lambda_kl=-1", "--out-dir", "/nonexistent/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sampler.lambda_kl"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[sampler]\nstepz = 3\n").unwrap();
    let o = run(&["print-config", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "run",
        "--set",
        "sampler.lambda_r=1e9",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["diverged"], true);
    assert!(summary["divergence"]["step"].is_u64());
    assert!(Path::new(&dir.path().join("trajectory.csv")).is_file());
}

#[test]
fn verify_only_runs_the_named_check() {
    let o = run(&["verify", "--only", "gradcheck.kl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["id"], "gradcheck.kl");
    assert_eq!(lines[0]["pass"], true);

    assert_eq!(run(&["verify", "--only", "no.such.check"]).status.code(), Some(2));
}

#[test]
fn sweep_covers_the_grid_times_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "--workers",
        "2",
        "sweep",
        "--grid",
        "sampler.lambda_kl=0,10",
        "--grid",
        "sampler.lambda_r=1,2,3",
        "--seeds",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 2);

    let empty = run(&["sweep", "--grid", "sampler.lambda_kl=", "--out-dir", dir.path().to_str().unwrap()]);
    assert_ne!(empty.status.code(), Some(0));
    assert!(stderr(&empty).contains("no sweep points"), "{}", stderr(&empty));
}
