//! Output files for a run and parameter sweeps over configurations.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, DataMixConfig, ExperimentConfig, PrivacyConfig};
use crate::fedsim::{run_experiment, RoundReport, RunOutput, RunSummary};
use crate::scenario::World;
use crate::Error;

/// Column order of `rounds.csv`.
pub const ROUND_COLUMNS: [&str; 22] = [
    "round",
    "algorithm",
    "selected",
    "admissible",
    "l",
    "h",
    "effective",
    "redundant",
    "r_ef",
    "r_re",
    "bound",
    "g",
    "energy",
    "latency",
    "objective",
    "max_kkt_residual",
    "solver_calls",
    "sigma_up_mean",
    "sigma_down_max",
    "accuracy",
    "loss",
    "cumulative_energy",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn round_row(r: &RoundReport) -> Vec<String> {
    vec![
        r.round.to_string(),
        r.algorithm.to_string(),
        r.plan.m.to_string(),
        r.admissible.to_string(),
        opt(r.bounds.map(|b| b.l)),
        opt(r.bounds.map(|b| b.h)),
        r.plan.effective.to_string(),
        r.plan.redundant.to_string(),
        num(r.plan.r_ef),
        num(r.r_re),
        num(r.plan.bound),
        num(r.plan.g),
        num(r.energy),
        num(r.latency),
        num(r.objective),
        num(r.max_kkt_residual),
        r.solver_calls.to_string(),
        num(r.sigma_up_mean),
        num(r.sigma_down_max),
        num(r.accuracy),
        num(r.loss),
        num(r.cumulative_energy),
    ]
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Output(format!("{}: {e}", path.display())))?;
    let out = |e: csv::Error| Error::Output(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(out)?;
    for row in rows {
        w.write_record(&row).map_err(out)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Output(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_rounds_csv(path: &Path, reports: &[RoundReport]) -> Result<(), Error> {
    write_csv(path, &ROUND_COLUMNS, reports.iter().map(round_row))
}

#[derive(Serialize)]
struct Snapshot<'a> {
    config: &'a ExperimentConfig,
    world: &'a World,
}

/// `scenario.json`: the configuration plus the generated world. Loading it with
/// [`ExperimentConfig::load`] reproduces the run.
pub fn write_scenario(path: &Path, cfg: &ExperimentConfig) -> Result<World, Error> {
    let world = World::generate(cfg)?;
    write_json(path, &Snapshot { config: cfg, world: &world })?;
    Ok(world)
}

/// `rounds.csv`, `summary.json` and `scenario.json` under `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_rounds_csv(&dir.join("rounds.csv"), &out.reports)?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    write_scenario(&dir.join("scenario.json"), &out.config)?;
    Ok(())
}

/// Axes of a sweep; an empty axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub r_ef0: Vec<f64>,
    /// `None` disables privacy for that point.
    pub epsilon: Vec<Option<f64>>,
    pub effective: Vec<u64>,
    pub redundant: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub config: ExperimentConfig,
}

fn axis<T: Clone>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().cloned().map(Some).collect()
    }
}

/// Cartesian product of the axes, in axis order.
pub fn sweep_points(base: &ExperimentConfig, spec: &SweepSpec) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for algo in axis(&spec.algorithms) {
        for seed in axis(&spec.seeds) {
            for r in axis(&spec.r_ef0) {
                for eps in axis(&spec.epsilon) {
                    for eff in axis(&spec.effective) {
                        for red in axis(&spec.redundant) {
                            let mut cfg = base.clone();
                            let mut label = Vec::new();
                            if let Some(a) = algo {
                                cfg.algorithm = a;
                                label.push(format!("algo={a}"));
                            }
                            if let Some(s) = seed {
                                cfg.seed = s;
                                label.push(format!("seed={s}"));
                            }
                            if let Some(r) = r {
                                cfg.selection.r_ef0 = r;
                                label.push(format!("r_ef0={r}"));
                            }
                            if let Some(e) = eps {
                                match e {
                                    Some(e) => {
                                        let p = cfg.privacy.get_or_insert_with(PrivacyConfig::default);
                                        p.epsilon = e;
                                        label.push(format!("epsilon={e}"));
                                    }
                                    None => {
                                        cfg.privacy = None;
                                        label.push("epsilon=none".into());
                                    }
                                }
                            }
                            if eff.is_some() || red.is_some() {
                                let mix = cfg.data_mix.get_or_insert_with(DataMixConfig::default);
                                if let Some(e) = eff {
                                    mix.effective = e;
                                    label.push(format!("effective={e}"));
                                }
                                if let Some(r) = red {
                                    mix.redundant = r;
                                    label.push(format!("redundant={r}"));
                                }
                            }
                            out.push(SweepPoint {
                                label: if label.is_empty() { "base".into() } else { label.join(",") },
                                config: cfg,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub label: String,
    pub config: ExperimentConfig,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
    pub error_kind: Option<String>,
    #[serde(skip)]
    pub reports: Vec<RoundReport>,
}

/// Run every point; a failing point is recorded and does not stop the others.
pub fn run_sweep(points: &[SweepPoint]) -> Vec<SweepResult> {
    points
        .par_iter()
        .map(|p| match run_experiment(&p.config) {
            Ok(out) => SweepResult {
                label: p.label.clone(),
                config: p.config.clone(),
                summary: Some(out.summary),
                error: None,
                error_kind: None,
                reports: out.reports,
            },
            Err(e) => SweepResult {
                label: p.label.clone(),
                config: p.config.clone(),
                summary: None,
                error: Some(e.to_string()),
                error_kind: Some(e.kind().to_string()),
                reports: Vec::new(),
            },
        })
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 12] = [
    "label",
    "algorithm",
    "seed",
    "status",
    "final_accuracy",
    "best_accuracy",
    "total_energy",
    "mean_latency",
    "mean_selected",
    "mean_r_ef",
    "mean_r_re",
    "error",
];

pub const SWEEP_ROUND_COLUMNS: [&str; 6] = ["label", "round", "accuracy", "loss", "energy", "cumulative_energy"];

/// Directory name for a sweep point.
pub fn point_dir(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// `sweep.csv` (one row per point), `sweep_rounds.csv` (one row per point and
/// round) and `sweep.json` under `dir`, plus each successful point's run files
/// in a subdirectory named after its label.
pub fn write_sweep(dir: &Path, results: &[SweepResult]) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for r in results {
        if let Some(summary) = &r.summary {
            let out = RunOutput {
                config: r.config.clone(),
                reports: r.reports.clone(),
                summary: summary.clone(),
            };
            write_run(&dir.join(point_dir(&r.label)), &out)?;
        }
    }
    let per_round = results.iter().flat_map(|r| {
        r.reports.iter().map(|x| {
            vec![
                r.label.clone(),
                x.round.to_string(),
                num(x.accuracy),
                num(x.loss),
                num(x.energy),
                num(x.cumulative_energy),
            ]
        })
    });
    write_csv(&dir.join("sweep_rounds.csv"), &SWEEP_ROUND_COLUMNS, per_round)?;
    let rows = results.iter().map(|r| {
        let s = r.summary.as_ref();
        let f = |g: fn(&RunSummary) -> f64| s.map_or_else(String::new, |s| num(g(s)));
        vec![
            r.label.clone(),
            r.config.algorithm.to_string(),
            r.config.seed.to_string(),
            if s.is_some() { "ok" } else { "error" }.to_string(),
            f(|s| s.final_accuracy),
            f(|s| s.best_accuracy),
            f(|s| s.total_energy),
            f(|s| s.mean_latency),
            f(|s| s.mean_selected),
            f(|s| s.mean_r_ef),
            f(|s| s.mean_r_re),
            r.error.clone().unwrap_or_default(),
        ]
    });
    write_csv(&dir.join("sweep.csv"), &SWEEP_COLUMNS, rows)?;
    write_json(&dir.join("sweep.json"), &results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_and_labels() {
        let spec = SweepSpec {
            r_ef0: vec![0.5, 0.7],
            epsilon: vec![Some(10.0), None],
            ..SweepSpec::default()
        };
        let pts = sweep_points(&ExperimentConfig::default(), &spec);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1].label, "r_ef0=0.5,epsilon=none");
        assert!(pts[1].config.privacy.is_none());
        assert_eq!(pts[2].config.privacy.as_ref().unwrap().epsilon, 10.0);
        assert_eq!(sweep_points(&ExperimentConfig::default(), &SweepSpec::default())[0].label, "base");
    }

    #[test]
    fn failing_points_are_isolated() {
        let mut base = ExperimentConfig {
            rounds: 1,
            ..ExperimentConfig::default()
        };
        base.scenario.n_clients = 16;
        base.system.model_bits = Some(1.5e7);
        let spec = SweepSpec {
            r_ef0: vec![0.3, 1.0],
            ..SweepSpec::default()
        };
        let res = run_sweep(&sweep_points(&base, &spec));
        assert!(res[0].summary.is_some(), "{:?}", res[0].error);
        assert_eq!(res[1].error_kind.as_deref(), Some("edcr-above-max"));
        let dir = tempfile::tempdir().unwrap();
        write_sweep(dir.path(), &res).unwrap();
        let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().starts_with("label,algorithm"));
        let rounds = fs::read_to_string(dir.path().join("sweep_rounds.csv")).unwrap();
        assert_eq!(rounds.lines().count(), 2);
        assert!(dir.path().join("r_ef0_0.3").join("rounds.csv").exists());
        assert!(!dir.path().join("r_ef0_1").exists());
    }

    #[test]
    fn run_files_have_fixed_schema() {
        let mut cfg = ExperimentConfig {
            rounds: 2,
            ..ExperimentConfig::default()
        };
        cfg.scenario.n_clients = 16;
        let out = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &out).unwrap();
        let text = fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ROUND_COLUMNS.join(","));
        assert_eq!(lines.count(), 2);
        let back = ExperimentConfig::load(dir.path().join("scenario.json")).unwrap();
        assert_eq!(back, cfg);
        let summary: RunSummary =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary, out.summary);
    }
}
