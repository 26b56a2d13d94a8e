use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hflsnm::config::{Algorithm, ConfigError, ExperimentConfig, PrivacyConfig};
use hflsnm::experiment::{run_sweep, sweep_points, write_run, write_scenario, write_sweep, SweepSpec};
use hflsnm::fedsim::run_experiment;
use hflsnm::oracle::{p1_oracle_rows, p2_oracle_rows};
use hflsnm::Error;

/// Hierarchical federated learning over a data-sharing social network.
#[derive(Parser)]
#[command(name = "hflsnm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, summary.json and scenario.json.
    Run {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one experiment per value of a parameter.
    Sweep {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values; `none` disables privacy in an epsilon sweep.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Generate the world for a configuration and write it as scenario.json.
    GenScenario {
        #[command(flatten)]
        base: BaseArgs,
        #[arg(long, default_value = "scenario.json")]
        out: PathBuf,
    },
    /// Compare the allocator and the association heuristic with brute force.
    Oracle {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Random allocation instances (2–4 clients each).
        #[arg(long, default_value_t = 20)]
        p1: usize,
        /// Random association instances.
        #[arg(long, default_value_t = 10)]
        p2: usize,
        #[arg(long, default_value_t = 5)]
        clients: usize,
        #[arg(long, default_value_t = 2)]
        servers: usize,
    },
}

#[derive(Args)]
struct BaseArgs {
    /// JSON configuration or scenario.json snapshot.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long = "r-ef0")]
    r_ef0: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Privacy budget, or `none` to disable privacy.
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<String>,
    /// Dotted-path override, e.g. `system.t0=0.4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    #[value(name = "r_ef0", alias = "r-ef0")]
    REf0,
    Epsilon,
    Redundant,
    Effective,
    Algo,
    Seed,
}

fn invalid(msg: String) -> Error {
    Error::Config(ConfigError::Invalid(msg))
}

fn parse_epsilon(v: &str) -> Result<Option<f64>, Error> {
    if v.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| invalid(format!("epsilon must be a number or `none`, got {v:?}")))
}

fn parse_num<T: std::str::FromStr>(what: &str, v: &str) -> Result<T, Error> {
    v.trim()
        .parse()
        .map_err(|_| invalid(format!("cannot parse {what} value {v:?}")))
}

impl BaseArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.apply_override(k.trim(), v.trim())?;
        }
        if let Some(a) = &self.algo {
            cfg.algorithm = a.parse()?;
        }
        if let Some(r) = self.r_ef0 {
            cfg.selection.r_ef0 = r;
        }
        if let Some(n) = self.rounds {
            cfg.rounds = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = &self.epsilon {
            match parse_epsilon(e)? {
                Some(e) => cfg.privacy.get_or_insert_with(PrivacyConfig::default).epsilon = e,
                None => cfg.privacy = None,
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sweep_spec(param: SweepParam, values: &[String]) -> Result<SweepSpec, Error> {
    let mut spec = SweepSpec::default();
    for v in values {
        match param {
            SweepParam::REf0 => spec.r_ef0.push(parse_num("r_ef0", v)?),
            SweepParam::Epsilon => spec.epsilon.push(parse_epsilon(v.trim())?),
            SweepParam::Redundant => spec.redundant.push(parse_num("redundant", v)?),
            SweepParam::Effective => spec.effective.push(parse_num("effective", v)?),
            SweepParam::Algo => spec.algorithms.push(v.trim().parse::<Algorithm>()?),
            SweepParam::Seed => spec.seeds.push(parse_num("seed", v)?),
        }
    }
    Ok(spec)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn run(base: &BaseArgs, out: &Path) -> Result<(), Error> {
    let cfg = base.config()?;
    let output = run_experiment(&cfg)?;
    write_run(out, &output)?;
    print_json(&json!(output.summary));
    Ok(())
}

fn sweep(base: &BaseArgs, param: SweepParam, values: &[String], out: &Path) -> Result<(), Error> {
    let cfg = base.config()?;
    let spec = sweep_spec(param, values)?;
    let points = sweep_points(&cfg, &spec);
    for p in &points {
        p.config.validate()?;
    }
    let results = run_sweep(&points);
    write_sweep(out, &results)?;
    let failures: Vec<_> = results
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| json!({"label": r.label, "error": r.error_kind, "message": r.error}))
        .collect();
    for f in &failures {
        eprintln!("{f}");
    }
    print_json(&json!({
        "points": results.len(),
        "failed": failures.len(),
        "out": out.display().to_string(),
    }));
    Ok(())
}

fn gen_scenario(base: &BaseArgs, out: &Path) -> Result<(), Error> {
    let cfg = base.config()?;
    let world = write_scenario(out, &cfg)?;
    print_json(&json!({
        "clients": world.n_clients(),
        "edge_servers": world.sites.len(),
        "edges": world.graph.n_edges(),
        "unique_samples": world.graph.total_unique(),
        "shared_samples": world.graph.total_shared(),
        "out": out.display().to_string(),
    }));
    Ok(())
}

fn oracle(seed: u64, p1: usize, p2: usize, clients: usize, servers: usize) -> Result<(), Error> {
    let tol = hflsnm::resource::AoSolver::default().tol;
    println!("allocation vs grid search");
    println!("{:>3} {:>7} {:>14} {:>14} {:>11} {:>10} {:>3} {:>4}", "#", "clients", "energy", "grid", "gap", "kkt", "ao", "bind");
    for (i, r) in p1_oracle_rows(seed, p1, tol)?.iter().enumerate() {
        println!(
            "{:>3} {:>7} {:>14.6e} {:>14.6e} {:>11.3e} {:>10.2e} {:>3} {:>4}",
            i, r.clients, r.energy, r.grid_energy, r.gap, r.kkt_residual, r.ao_iterations, r.binding
        );
    }
    if p2 > 0 {
        println!();
        println!("fast greedy vs exhaustive association ({clients} clients, {servers} ES)");
        println!("{:>3} {:>14} {:>14} {:>14} {:>8} {:>9} {:>6}", "#", "greedy", "optimum", "worst", "ratio", "feasible", "valid");
        let rows = p2_oracle_rows(seed, p2, clients, servers, tol)?;
        for (i, r) in rows.iter().enumerate() {
            println!(
                "{:>3} {:>14.6e} {:>14.6e} {:>14.6e} {:>8.5} {:>9} {:>6}",
                i,
                r.greedy_energy,
                r.optimum,
                r.worst,
                r.ratio,
                r.feasible_assignments,
                r.violation.is_none()
            );
        }
        let mean = rows.iter().map(|r| r.ratio).sum::<f64>() / rows.len() as f64;
        println!("mean ratio {mean:.5}");
    }
    Ok(())
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("HFLSNM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("HFLSNM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Output(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return ExitCode::from(2);
        }
    };
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Run { base, out } => run(base, out),
        Command::Sweep {
            base,
            param,
            values,
            out,
        } => sweep(base, *param, values, out),
        Command::GenScenario { base, out } => gen_scenario(base, out),
        Command::Oracle {
            seed,
            p1,
            p2,
            clients,
            servers,
        } => oracle(*seed, *p1, *p2, *clients, *servers),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut body = json!({"error": e.kind(), "message": e.to_string()});
            if let Error::Selection(hflsnm::selection::SelectError::EdcrAboveMax { r_ef0, r_ef_max }) = root(&e) {
                body["r_ef0"] = json!(r_ef0);
                body["r_ef_max"] = json!(r_ef_max);
            }
            eprintln!("{body}");
            ExitCode::from(if e.is_invalid_input() { 2 } else { 1 })
        }
    }
}

fn root(e: &Error) -> &Error {
    match e {
        Error::Round { source, .. } => root(source),
        other => other,
    }
}
