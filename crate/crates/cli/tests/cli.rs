use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lmpcq(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmpcq")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn write_config(dir: &Path) {
    fs::write(
        dir.join("ltrack.toml"),
        "[track]\nwaypoints = [[0.0, 0.0, 1.0], [3.0, 0.0, 1.0], [3.0, 3.0, 1.0]]\ndelta = 0.8\n\n\
         [lmpc]\nN = 10\ndt = 0.1\n\n[task]\niterations = 2\n",
    )
    .unwrap();
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    for name in ["a", "b"] {
        let out = lmpcq(&["run", "--config", "ltrack.toml", "--out", &format!("runs/{name}"), "--seed", "7"], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let runs = dir.path().join("runs");
    for file in ["lap_times.csv", "safety_set/iteration_002.csv", "plots/xy_001.csv"] {
        assert_eq!(fs::read(runs.join("a").join(file)).unwrap(), fs::read(runs.join("b").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn missing_config_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = lmpcq(&["run", "--config", "absent.toml", "--out", "x"], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("parse error") && stderr.contains("absent.toml"), "{stderr}");
}

#[test]
fn zero_iterations_keeps_only_the_bootstrap() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let out = lmpcq(&["run", "--config", "ltrack.toml", "--out", "z", "--iterations", "0"], dir.path());
    assert!(out.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("z/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["laps"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["lap_times"].as_array().unwrap().len(), 1);
    assert_eq!(fs::read_to_string(dir.path().join("z/lap_times.csv")).unwrap().lines().count(), 2);
}

#[test]
fn replay_and_report_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    for seed in ["1", "2"] {
        let out = lmpcq(&["run", "--config", "ltrack.toml", "--out", &format!("r{seed}"), "--seed", seed, "--noise", "0"], dir.path());
        assert!(out.status.success());
    }
    let replay = lmpcq(&["replay", "r1", "--iteration", "1", "--out", "rp"], dir.path());
    assert!(replay.status.success());
    assert_eq!(fs::read(dir.path().join("rp/xy_001.csv")).unwrap(), fs::read(dir.path().join("r1/plots/xy_001.csv")).unwrap());
    assert!(!lmpcq(&["replay", "r1", "--iteration", "9"], dir.path()).status.success());

    let report = lmpcq(&["report", "r1", "r2", "--csv", "table.csv"], dir.path());
    assert!(report.status.success());
    let text = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "run,seed,bootstrap,iter_1,iter_2,best,band");
}

#[test]
fn bootstrap_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let out = lmpcq(&["bootstrap", "--config", "ltrack.toml", "--out", "boot"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("boot/safety_set/iteration_000.csv").is_file());
    assert!(!dir.path().join("boot/safety_set/iteration_001.csv").exists());
}
