//! `quids` command-line experiment runner.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use quids_core::dispatch::DispatcherKind;
use quids_core::experiment::{self, SweepSpec};
use quids_core::scenario::{ingest_trajectory_csv, ScenarioConfig, World};
use quids_core::truth_discovery::{infer, read_readings_csv, InferenceConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_SELF_CHECK: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "quids", version, about = "Crowdsensing vehicle dispatching simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a scenario and export its truth, sensors, candidates and demand.
    GenScenario(GenArgs),
    /// Run one dispatcher on a scenario and write its run record.
    Run(RunArgs),
    /// Execute a parameter sweep and write a merged result table.
    Sweep(SweepArgs),
    /// Infer sensor reliability and bias from a readings CSV.
    Truthdisc(TruthArgs),
    /// Spearman correlation between ASQ and R-RMSE over a result table.
    Correlate(CorrelateArgs),
    /// Check a scenario config, sweep spec or trajectory CSV.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct SeedArgs {
    /// Scenario seed; overrides QUIDS_SEED and the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Scenario config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArgs,
    /// Output directory.
    #[arg(long, default_value = "scenario")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of quids, nore, noin or na.
    #[arg(long, default_value = "quids")]
    dispatcher: DispatcherKind,
    #[command(flatten)]
    seed: SeedArgs,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Exit with status 4 when a run property is violated.
    #[arg(long)]
    self_check: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Sweep spec (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    seed: SeedArgs,
    /// Output directory; results go to `<out>/<sweep name>/`.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Runs executed in parallel.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    /// Exit with status 4 when a run fails or violates a run property.
    #[arg(long)]
    self_check: bool,
}

#[derive(Debug, Args)]
struct TruthArgs {
    /// Readings CSV with columns sensor_id,t,x,y,value.
    #[arg(long)]
    readings: PathBuf,
    /// Fleet size; defaults to the largest sensor id plus one.
    #[arg(long)]
    sensors: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
    /// Output JSON file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    /// Merged sweep CSV, or a directory of run record JSON files.
    #[arg(long)]
    input: PathBuf,
    /// Output JSON file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Scenario config or sweep spec (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trajectory CSV checked against the grid of `--config`.
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// A failure together with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<quids_core::Error> for Failure {
    fn from(e: quids_core::Error) -> Self {
        if e.is_config() {
            Failure::config(e.to_string())
        } else {
            Failure::runtime(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn read_input(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Prints a line to stdout; a closed pipe is not an error.
fn say(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn write_output(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::runtime(format!("{}: {e}", p.display()))),
        None => {
            say(text);
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::runtime(e.to_string()))
}

/// `--seed`, then `QUIDS_SEED`, then the config's own seed.
fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("QUIDS_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::config(format!("QUIDS_SEED: not an unsigned integer: '{v}'"))),
        Err(_) => Ok(config_seed),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            ScenarioConfig::from_toml(&read_input(p)?).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => ScenarioConfig::default(),
    };
    cfg.seed = resolve_seed(seed, cfg.seed)?;
    Ok(cfg)
}

fn gen_scenario(args: &GenArgs) -> Outcome {
    let cfg = load_config(args.config.as_deref(), args.seed.seed)?;
    let written = experiment::write_scenario(&cfg, &args.out)?;
    for p in written {
        say(&p.display().to_string());
    }
    Ok(())
}

fn run(args: &RunArgs) -> Outcome {
    let cfg = load_config(args.config.as_deref(), args.seed.seed)?;
    let outcome = experiment::run(&cfg, args.dispatcher)?;
    let path = experiment::write_run_outputs(&outcome, &args.out)?;
    info!("wrote {}", path.display());
    say(&to_json(&outcome.record)?);
    if args.self_check {
        let violations = experiment::self_check(&outcome.record);
        if !violations.is_empty() {
            return Err(Failure {
                code: EXIT_SELF_CHECK,
                message: violations.join("; "),
            });
        }
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Outcome {
    let mut spec = SweepSpec::from_toml(&read_input(&args.config)?)
        .map_err(|e| Failure::config(format!("{}: {e}", args.config.display())))?;
    spec.base.seed = resolve_seed(args.seed.seed, spec.base.seed)?;
    let rows = experiment::run_sweep(&spec, args.jobs, Some(&args.out))?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    say(&format!(
        "{} runs, {} failed, table {}",
        rows.len(),
        failed,
        args.out.join(&spec.name).join("results.csv").display()
    ));
    if args.self_check {
        let mut problems: Vec<String> = rows
            .iter()
            .filter(|r| !r.is_ok())
            .map(|r| format!("{}: {}", r.run_id, r.error))
            .collect();
        for row in rows.iter().filter(|r| r.is_ok()) {
            if row.dispatcher == DispatcherKind::Quids && row.asq < row.asq_na {
                problems.push(format!("{}: asq below no actuation", row.run_id));
            }
        }
        if !problems.is_empty() {
            return Err(Failure {
                code: EXIT_SELF_CHECK,
                message: problems.join("; "),
            });
        }
    }
    Ok(())
}

fn truthdisc(args: &TruthArgs) -> Outcome {
    let file =
        fs::File::open(&args.readings).map_err(|e| Failure::config(format!("{}: {e}", args.readings.display())))?;
    let readings = read_readings_csv(file).map_err(|e| Failure::config(format!("{}: {e}", args.readings.display())))?;
    let sensors = args
        .sensors
        .unwrap_or_else(|| readings.iter().map(|r| r.sensor + 1).max().unwrap_or(0));
    let cfg = InferenceConfig {
        epsilon: args.epsilon,
        max_iterations: args.max_iterations,
        warm_start: None,
    };
    let inference = infer(&readings, sensors, &cfg).map_err(|e| Failure::runtime(e.to_string()))?;
    let report = json!({
        "w": inference.state.weight,
        "b": inference.state.bias,
        "iterations": inference.iterations,
        "converged": inference.converged,
        "degenerate": inference.degenerate,
        "objective_trace": inference.objective_trace,
    });
    write_output(args.out.as_deref(), &to_json(&report)?)
}

fn correlate(args: &CorrelateArgs) -> Outcome {
    let report = if args.input.is_dir() {
        let mut records = Vec::new();
        let entries =
            fs::read_dir(&args.input).map_err(|e| Failure::config(format!("{}: {e}", args.input.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter(|p| !p.to_string_lossy().ends_with(".plans.json"))
            .collect();
        paths.sort();
        for p in paths {
            let record: experiment::RunRecord =
                serde_json::from_str(&read_input(&p)?).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            records.push(record);
        }
        experiment::correlate_records(&records)?
    } else {
        let file =
            fs::File::open(&args.input).map_err(|e| Failure::config(format!("{}: {e}", args.input.display())))?;
        let rows = experiment::read_sweep_csv(file)?;
        experiment::correlate_rows(&rows)?
    };
    write_output(args.out.as_deref(), &to_json(&report)?)
}

fn validate(args: &ValidateArgs) -> Outcome {
    if args.config.is_none() && args.trajectories.is_none() {
        return Err(Failure::config(
            "nothing to validate: pass --config and/or --trajectories",
        ));
    }
    let mut scenario = ScenarioConfig::default();
    if let Some(path) = &args.config {
        let text = read_input(path)?;
        let is_sweep = toml::from_str::<toml::Table>(&text)
            .map(|t| t.contains_key("dimension"))
            .unwrap_or(false);
        if is_sweep {
            let spec = SweepSpec::from_toml(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            say(&format!(
                "{}: valid sweep spec, {} runs",
                path.display(),
                spec.jobs().len()
            ));
            scenario = spec.base;
        } else {
            scenario =
                ScenarioConfig::from_toml(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            say(&format!("{}: valid scenario, hash {}", path.display(), scenario.hash()));
        }
    }
    if let Some(path) = &args.trajectories {
        let world = World::generate(&scenario).map_err(|e| Failure::config(e.to_string()))?;
        let file = fs::File::open(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let fleet = ingest_trajectory_csv(file, &world.grid)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        say(&format!(
            "{}: valid trajectories for {} vehicles",
            path.display(),
            fleet.len()
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenScenario(a) => gen_scenario(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Truthdisc(a) => truthdisc(a),
        Command::Correlate(a) => correlate(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
