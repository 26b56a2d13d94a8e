use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hflsnm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hflsnm"))
        .args(args)
        .env_remove("HFLSNM_THREADS")
        .output()
        .expect("binary runs")
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--rounds", "4", "--seed", "3", "--out", out];
    args.extend_from_slice(extra);
    hflsnm(&args)
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_into(&a, &[]).status.success());
    assert!(run_into(&b, &[]).status.success());
    for f in ["rounds.csv", "summary.json", "scenario.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let csv = String::from_utf8(read(a.join("rounds.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn thread_cap_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_into(&a, &[]).status.success());
    let capped = Command::new(env!("CARGO_BIN_EXE_hflsnm"))
        .args(["run", "--rounds", "4", "--seed", "3", "--out", b.to_str().unwrap()])
        .env("HFLSNM_THREADS", "1")
        .output()
        .unwrap();
    assert!(capped.status.success());
    assert_eq!(read(a.join("rounds.csv")), read(b.join("rounds.csv")));
    let bad = Command::new(env!("CARGO_BIN_EXE_hflsnm"))
        .args(["oracle", "--p1", "1", "--p2", "0"])
        .env("HFLSNM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn scenario_snapshot_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    assert!(run_into(&a, &["--algo", "lg", "--epsilon", "50"]).status.success());
    let snap = a.join("scenario.json");
    let b = tmp.path().join("b");
    let out = hflsnm(&["run", "--config", snap.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(a.join("rounds.csv")), read(b.join("rounds.csv")));
    let v: Value = serde_json::from_slice(&read(&snap)).unwrap();
    assert_eq!(v["config"]["seed"], 3);
    assert_eq!(v["config"]["algorithm"], "lg");
    assert_eq!(v["world"]["sites"].as_array().unwrap().len(), 4);
}

#[test]
fn target_above_reachable_coverage_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(
        tmp.path(),
        &["--r-ef0", "1.0", "--set", "system.model_bits=1.5e7", "--set", "scenario.n_clients=24"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "edcr-above-max");
    assert!(err["message"].as_str().unwrap().contains("r_ef_max"));
    assert!(err["r_ef_max"].as_f64().unwrap() < 1.0);
}

#[test]
fn invalid_inputs_exit_with_2() {
    for args in [
        vec!["run", "--algo", "nope"],
        vec!["run", "--r-ef0", "1.5"],
        vec!["run", "--set", "system.t0"],
        vec!["run", "--set", "system.warp=9"],
        vec!["run", "--epsilon", "-1"],
        vec!["sweep", "--param", "r_ef0", "--values", "abc"],
        vec!["run", "--config", "/nonexistent/config.json"],
    ] {
        let out = hflsnm(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["error"], "config", "{args:?}");
    }
    for args in [vec!["run", "--rounds", "many"], vec!["bogus"], vec!["sweep", "--param", "tau", "--values", "1"]] {
        let out = hflsnm(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["error"], "usage", "{args:?}");
    }
    assert_eq!(hflsnm(&["--help"]).status.code(), Some(0));
}

#[test]
fn do_snm_uses_less_energy_than_random_allocation() {
    let tmp = tempfile::tempdir().unwrap();
    let energy = |algo: &str| {
        let dir = tmp.path().join(algo);
        assert!(run_into(&dir, &["--algo", algo]).status.success());
        let s: Value = serde_json::from_slice(&read(dir.join("summary.json"))).unwrap();
        s["total_energy"].as_f64().unwrap()
    };
    assert!(energy("do-snm") < energy("ra"));
}

#[test]
fn sweep_writes_per_value_and_combined_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hflsnm(&[
        "sweep",
        "--param",
        "epsilon",
        "--values",
        "40,none",
        "--rounds",
        "3",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(read(tmp.path().join("sweep.csv"))).unwrap();
    assert_eq!(table.lines().count(), 3);
    let rounds = String::from_utf8(read(tmp.path().join("sweep_rounds.csv"))).unwrap();
    assert_eq!(rounds.lines().next().unwrap(), "label,round,accuracy,loss,energy,cumulative_energy");
    assert_eq!(rounds.lines().count(), 7);
    assert!(tmp.path().join("epsilon_40").join("rounds.csv").exists());
    assert!(tmp.path().join("epsilon_none").join("summary.json").exists());
}

#[test]
fn single_value_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("run");
    assert!(run_into(&run_dir, &["--r-ef0", "0.5"]).status.success());
    let sweep_dir = tmp.path().join("sweep");
    let out = hflsnm(&[
        "sweep", "--param", "r_ef0", "--values", "0.5", "--rounds", "4", "--seed", "3", "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(read(run_dir.join("rounds.csv")), read(sweep_dir.join("r_ef0_0.5").join("rounds.csv")));
    assert_eq!(read(run_dir.join("summary.json")), read(sweep_dir.join("r_ef0_0.5").join("summary.json")));
}

#[test]
fn sweep_isolates_failing_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hflsnm(&[
        "sweep", "--param", "r_ef0", "--values", "0.3,1.0", "--rounds", "2", "--set", "system.model_bits=1.5e7",
        "--set", "scenario.n_clients=24", "--out", tmp.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("edcr-above-max"), "{stderr}");
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["failed"], 1);
    assert_eq!(summary["points"], 2);
}

#[test]
fn gen_scenario_and_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("s.json");
    let out = hflsnm(&["gen-scenario", "--seed", "5", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&read(&path)).unwrap();
    assert_eq!(v["config"]["seed"], 5);
    assert_eq!(v["world"]["radios"].as_array().unwrap().len(), 60);

    let out = hflsnm(&["oracle", "--p1", "3", "--p2", "2", "--clients", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mean ratio"));
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 5);
}
