use hflsnm::config::{Algorithm, ExperimentConfig};
use hflsnm::experiment::{run_sweep, sweep_points, write_run, write_scenario, SweepSpec};
use hflsnm::fedsim::{run_experiment, Simulator};
use hflsnm::scenario::World;
use proptest::prelude::*;

fn small(seed: u64, algorithm: Algorithm) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        algorithm,
        rounds: 3,
        ..ExperimentConfig::default()
    };
    cfg.scenario.n_clients = 24;
    cfg
}

#[test]
fn scenario_snapshot_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    let cfg = small(11, Algorithm::Lg);
    let world = write_scenario(&path, &cfg).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    let back: World = serde_json::from_value(v["world"].clone()).unwrap();
    assert_eq!(back, world);
    assert_eq!(World::generate(&cfg).unwrap(), world);
    let reloaded = ExperimentConfig::load(&path).unwrap();
    assert_eq!(reloaded, cfg);
}

#[test]
fn run_directory_has_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&small(2, Algorithm::DoSnm)).unwrap();
    write_run(dir.path(), &out).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"], 3);
    assert!(dir.path().join("scenario.json").exists());
}

#[test]
fn sweep_over_algorithms_matches_single_runs() {
    let base = small(5, Algorithm::DoSnm);
    let spec = SweepSpec {
        algorithms: vec![Algorithm::Ra, Algorithm::Rd],
        ..SweepSpec::default()
    };
    let results = run_sweep(&sweep_points(&base, &spec));
    assert_eq!(results.len(), 2);
    for r in &results {
        let single = run_experiment(&r.config).unwrap();
        assert_eq!(r.summary.as_ref(), Some(&single.summary));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rounds_respect_deadline_and_bound(seed in 0u64..1000, algo in 0usize..6) {
        let cfg = small(seed, Algorithm::ALL[algo]);
        let mut sim = Simulator::new(&cfg).unwrap();
        let mut cumulative = 0.0;
        for _ in 0..2 {
            let r = sim.step().unwrap();
            cumulative += r.energy;
            prop_assert!(r.energy <= r.plan.bound * (1.0 + 1e-9));
            prop_assert!(r.latency <= cfg.system.t0 * (1.0 + 1e-9));
            prop_assert!((r.cumulative_energy - cumulative).abs() <= 1e-9 * cumulative);
            prop_assert_eq!(r.plan.selection.len(), r.plan.m);
            prop_assert!((0.0..=1.0).contains(&r.accuracy));
        }
    }
}
