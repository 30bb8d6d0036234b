//! Seeded end-to-end runs, parameter sweeps and the ASQ/R-RMSE correlation
//! report.
//!
//! A run generates a world, then for every actuation period infers sensor
//! reliability from the readings gathered so far, builds the demand field,
//! plans dispatches, applies driver acceptance, moves the fleet along the
//! realized trajectories and samples new readings. At the end the readings
//! are aggregated, reconstructed over the whole grid and compared with the
//! ground truth.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::{
    apply_acceptance, baseline_plan, AcceptanceModel, CandidateSet, DispatchPlan, DispatcherKind, PlanContext,
};
use crate::gridworld::{write_trajectories_csv, Trajectory};
use crate::incentive::{BudgetLedger, IncentiveParams, Money};
use crate::metrics::{self, AsqBreakdown};
use crate::reconstruct::{self, ReconstructedField, ReconstructionInput};
use crate::scenario::{inject_prediction_error, sample_readings, ScenarioConfig, World};
use crate::truth_discovery::{infer, write_readings_csv, Inference, InferenceConfig, SensorReading, WarmStart};
use crate::{Error, Result};

/// Slack used when checking floating-point invariants of a finished run.
const CHECK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("sweep spec: {0}")]
    Spec(String),
    #[error("correlation needs at least {needed} runs, got {got}")]
    InsufficientRuns { needed: usize, got: usize },
    #[error("result table line {line}: {message}")]
    Table { line: usize, message: String },
}

/// Summary of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub scenario: String,
    pub config_hash: String,
    pub dispatcher: DispatcherKind,
    pub seed: u64,
    pub beta: f64,
    pub entropy: f64,
    pub coverage_q: usize,
    pub asq: f64,
    /// ASQ of the no-actuation run on the same world.
    pub asq_na: f64,
    pub r_rmse_by_algo: BTreeMap<String, f64>,
    pub s_mae: f64,
    /// Largest R-RMSE reduction over no actuation across reconstructors, in
    /// percent.
    pub err_reduction_pct: f64,
    pub budget: f64,
    pub acceptance_rate: f64,
    pub noise_min: f64,
    pub noise_max: f64,
    pub prediction_error: f64,
    /// Total incentives paid over all periods.
    pub spend: f64,
    /// Largest spend of a single period; bounded by `budget`.
    pub max_period_spend: f64,
    pub dispatched: usize,
    pub declined: usize,
    pub readings: usize,
    pub sensed_cells: usize,
    pub inference_iterations: usize,
    pub inference_converged: bool,
    pub weight_normalization_error: f64,
    pub bias_sum: f64,
    pub wall_time_ms: f64,
}

impl RunRecord {
    /// The record with its wall time zeroed, for reproducibility checks.
    pub fn without_wall_time(&self) -> Self {
        Self {
            wall_time_ms: 0.0,
            ..self.clone()
        }
    }

    fn numeric_fields(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("beta", self.beta),
            ("entropy", self.entropy),
            ("asq", self.asq),
            ("asq_na", self.asq_na),
            ("s_mae", self.s_mae),
            ("err_reduction_pct", self.err_reduction_pct),
            ("budget", self.budget),
            ("spend", self.spend),
            ("max_period_spend", self.max_period_spend),
            ("weight_normalization_error", self.weight_normalization_error),
            ("bias_sum", self.bias_sum),
            ("wall_time_ms", self.wall_time_ms),
        ];
        out.extend(self.r_rmse_by_algo.values().map(|&v| ("r_rmse", v)));
        out
    }

    /// Names of numeric fields that are NaN or infinite.
    pub fn non_finite_fields(&self) -> Vec<&'static str> {
        self.numeric_fields()
            .into_iter()
            .filter(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
            .collect()
    }
}

/// Everything one period produced.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodLog {
    pub period: usize,
    pub plan: DispatchPlan,
    pub declined: Vec<usize>,
    pub inference_iterations: usize,
    pub spend: Money,
}

/// A finished run with its artifacts.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub periods: Vec<PeriodLog>,
    /// One ledger per period; the budget applies to each period.
    pub ledgers: Vec<BudgetLedger>,
    pub trajectories: Vec<Trajectory>,
    pub readings: Vec<SensorReading>,
    pub inference: Inference,
    pub reconstructions: Vec<ReconstructedField>,
}

struct Simulation {
    periods: Vec<PeriodLog>,
    ledgers: Vec<BudgetLedger>,
    trajectories: Vec<Trajectory>,
    readings: Vec<SensorReading>,
}

struct Evaluation {
    asq: AsqBreakdown,
    inference: Inference,
    reconstructions: Vec<ReconstructedField>,
    r_rmse: BTreeMap<String, f64>,
    s_mae: f64,
}

/// Incentive parameters of a scenario.
pub fn incentive_params(cfg: &ScenarioConfig) -> Result<IncentiveParams> {
    let inc = &cfg.incentive;
    let r_min = Money::from_units(inc.r_min)?;
    let r_max = Money::from_units(inc.r_max)?;
    let budget = Money::from_units(inc.budget)?;
    let params = match inc.r_u {
        Some(r_u) => IncentiveParams::with_unit_rate(r_min, r_max, r_u, budget)?,
        None => IncentiveParams::new(r_min, r_max, cfg.grid.actuation_period, budget)?,
    };
    Ok(params)
}

fn inference_config(cfg: &ScenarioConfig, warm_start: Option<WarmStart>) -> InferenceConfig {
    InferenceConfig {
        epsilon: cfg.inference.epsilon,
        max_iterations: cfg.inference.max_iterations,
        warm_start,
    }
}

fn simulate(world: &World, kind: DispatcherKind) -> Result<Simulation> {
    let cfg = &world.config;
    let fleet = cfg.fleet.vehicles;
    let len = cfg.grid.actuation_period;
    let window = world.window_grid();
    let params = incentive_params(cfg)?;
    let constant = Money::from_units(cfg.incentive.constant.unwrap_or(cfg.incentive.r_max))?;
    let acceptance = AcceptanceModel::new(cfg.acceptance_rate, cfg.seed)?;

    let mut ledgers = Vec::with_capacity(cfg.grid.periods);
    let mut positions = world.start_positions();
    let mut parts: Vec<Vec<Trajectory>> = vec![Vec::new(); fleet];
    let mut readings: Vec<SensorReading> = Vec::new();
    let mut warm: Option<WarmStart> = None;
    let mut periods = Vec::with_capacity(cfg.grid.periods);

    for period in 1..=cfg.grid.periods {
        let offset = (period - 1) * len;
        let actual = world.synthesize_fleet(&positions, period);
        let predicted = inject_prediction_error(&actual, &window, cfg.prediction_error, cfg.seed, period);
        let originals: Vec<&Trajectory> = predicted.iter().map(CandidateSet::original).collect();
        let demand = world.generate_demand(period, &originals)?;

        let (weights, iterations) = if readings.is_empty() {
            (vec![(fleet as f64).ln(); fleet], 0)
        } else {
            let inference = infer(&readings, fleet, &inference_config(cfg, warm.take()))?;
            let iterations = inference.iterations;
            let weights = inference.state.weight.clone();
            warm = Some(inference.warm_start());
            (weights, iterations)
        };

        let mut ledger = BudgetLedger::new(params.budget);
        let ctx = PlanContext {
            grid: &window,
            candidates: &predicted,
            weights: &weights,
            demand: &demand,
            params: &params,
            asq: &cfg.asq,
        };
        let mut plan = baseline_plan(kind, &ctx, constant, &mut ledger)?;
        let declined = apply_acceptance(&mut plan, &acceptance, period, &mut ledger);
        debug!(
            "period {period}: {} dispatched, {} declined, remaining {}",
            plan.dispatched_count(),
            declined.len(),
            ledger.remaining()
        );

        for (set, decision) in actual.iter().zip(&plan.decisions) {
            let chosen = set.get(decision.candidate).unwrap_or_else(|| set.original());
            let realized = chosen.shifted(offset);
            readings.extend(sample_readings(&world.truth, &[&realized], &world.sensors, cfg.seed));
            if let Some(last) = realized.last() {
                positions[set.vehicle()] = last.position();
            }
            parts[set.vehicle()].push(realized);
        }
        periods.push(PeriodLog {
            period,
            plan,
            declined,
            inference_iterations: iterations,
            spend: ledger.committed(),
        });
        ledgers.push(ledger);
    }

    let trajectories = parts
        .iter()
        .enumerate()
        .map(|(c, p)| Trajectory::concat(c, p))
        .collect();
    Ok(Simulation {
        periods,
        ledgers,
        trajectories,
        readings,
    })
}

fn evaluate(world: &World, sim: &Simulation) -> Result<Evaluation> {
    let cfg = &world.config;
    let weights = world.sensors.reference_weights();
    let entries: Vec<(&Trajectory, f64)> = sim
        .trajectories
        .iter()
        .map(|t| (t, weights.get(t.vehicle).copied().unwrap_or(0.0)))
        .collect();
    let asq = metrics::asq(&world.grid, &entries, &cfg.asq)?;

    let inference = infer(&sim.readings, cfg.fleet.vehicles, &inference_config(cfg, None))?;
    let input = ReconstructionInput::from_truth(&world.grid, &inference.truth)?;
    let reconstructions = reconstruct::reconstruct_all(&input, &cfg.reconstruction)?;
    let mut r_rmse = BTreeMap::new();
    for r in &reconstructions {
        if !r.fallback_slices.is_empty() {
            debug!(
                "{}: {} slices without readings",
                r.algorithm.as_str(),
                r.fallback_slices.len()
            );
        }
        r_rmse.insert(
            r.algorithm.as_str().to_string(),
            reconstruct::evaluate(r, &world.truth)?,
        );
    }
    let pairs: Vec<(f64, f64)> = inference
        .truth
        .iter()
        .map(|(cell, v)| (v, world.truth.at(cell)))
        .collect();
    let s_mae = metrics::s_mae(&pairs)?;
    Ok(Evaluation {
        asq,
        inference,
        reconstructions,
        r_rmse,
        s_mae,
    })
}

/// File-safe run identifier.
pub fn run_id(cfg: &ScenarioConfig, kind: DispatcherKind) -> String {
    let name: String = cfg
        .name
        .chars()
        .map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '-' })
        .collect();
    format!("{name}-{}-s{}-{}", kind.as_str(), cfg.seed, &cfg.hash()[..8])
}

/// Runs `kind` on the world described by `cfg`.
pub fn run(cfg: &ScenarioConfig, kind: DispatcherKind) -> Result<RunOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    let world = World::generate(cfg)?;
    let sim = simulate(&world, kind)?;
    let eval = evaluate(&world, &sim)?;
    let baseline = if kind == DispatcherKind::NoActuation {
        None
    } else {
        let na = simulate(&world, DispatcherKind::NoActuation)?;
        Some(evaluate(&world, &na)?)
    };
    let na = baseline.as_ref().unwrap_or(&eval);

    let reduction_pairs: Vec<(f64, f64)> = eval.r_rmse.iter().map(|(algo, &v)| (v, na.r_rmse[algo])).collect();
    let err_reduction_pct = metrics::max_error_reduction(&reduction_pairs)? * 100.0;

    let dispatched = sim.periods.iter().map(|p| p.plan.dispatched_count()).sum();
    let declined = sim.periods.iter().map(|p| p.declined.len()).sum();
    let record = RunRecord {
        run_id: run_id(cfg, kind),
        scenario: cfg.name.clone(),
        config_hash: cfg.hash(),
        dispatcher: kind,
        seed: cfg.seed,
        beta: cfg.asq.beta,
        entropy: eval.asq.entropy,
        coverage_q: eval.asq.coverage_q,
        asq: eval.asq.asq,
        asq_na: na.asq.asq,
        r_rmse_by_algo: eval.r_rmse.clone(),
        s_mae: eval.s_mae,
        err_reduction_pct,
        budget: cfg.incentive.budget,
        acceptance_rate: cfg.acceptance_rate,
        noise_min: cfg.sensors.noise_min,
        noise_max: cfg.sensors.noise_max,
        prediction_error: cfg.prediction_error,
        spend: sim.periods.iter().map(|p| p.spend.as_units()).sum(),
        max_period_spend: sim.periods.iter().map(|p| p.spend.as_units()).fold(0.0, f64::max),
        dispatched,
        declined,
        readings: sim.readings.len(),
        sensed_cells: eval.inference.truth.len(),
        inference_iterations: eval.inference.iterations,
        inference_converged: eval.inference.converged,
        weight_normalization_error: eval.inference.state.normalization_error(),
        bias_sum: eval.inference.state.bias_sum(),
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    info!(
        "{}: asq {:.4} (na {:.4}), spend {}",
        record.run_id, record.asq, record.asq_na, record.spend
    );
    Ok(RunOutcome {
        record,
        periods: sim.periods,
        ledgers: sim.ledgers,
        trajectories: sim.trajectories,
        readings: sim.readings,
        inference: eval.inference,
        reconstructions: eval.reconstructions,
    })
}

/// Violated run properties: per-period budget safety, weight normalization, bias
/// centring, no regress against no actuation for the full planner, and
/// finiteness of every numeric field.
pub fn self_check(record: &RunRecord) -> Vec<String> {
    let mut out = Vec::new();
    if record.max_period_spend > record.budget + CHECK_TOLERANCE {
        out.push(format!(
            "period spend {} exceeds budget {}",
            record.max_period_spend, record.budget
        ));
    }
    if record.weight_normalization_error > CHECK_TOLERANCE {
        out.push(format!(
            "weight normalization error {:e}",
            record.weight_normalization_error
        ));
    }
    if record.bias_sum.abs() > CHECK_TOLERANCE {
        out.push(format!("bias sum {:e}", record.bias_sum));
    }
    if record.dispatcher == DispatcherKind::Quids && record.asq + CHECK_TOLERANCE < record.asq_na {
        out.push(format!("asq {} below no-actuation asq {}", record.asq, record.asq_na));
    }
    for name in record.non_finite_fields() {
        out.push(format!("{name} is not finite"));
    }
    out
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    let file = fs::File::create(path).map_err(|source| io_error(path, source))?;
    Ok(BufWriter::new(file))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| io_error(path, source))
}

fn flush(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|source| io_error(path, source))
}

/// Writes the record as pretty JSON.
pub fn write_record(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, record)?;
    writeln!(w).map_err(|source| io_error(path, source))?;
    flush(w, path)
}

/// Writes a run's artifacts to `dir`: the record, per-period plans, the
/// ledger audit trail, realized trajectories, readings and reconstructions.
/// Returns the path of the record.
pub fn write_run_outputs(outcome: &RunOutcome, dir: &Path) -> Result<PathBuf> {
    create_dir(dir)?;
    let id = &outcome.record.run_id;
    let record_path = dir.join(format!("{id}.json"));
    write_record(&outcome.record, &record_path)?;

    let path = dir.join(format!("{id}.plans.json"));
    let mut w = create_file(&path)?;
    serde_json::to_writer_pretty(&mut w, &outcome.periods)?;
    flush(w, &path)?;

    let path = dir.join(format!("{id}.ledger.jsonl"));
    let mut w = create_file(&path)?;
    for ledger in &outcome.ledgers {
        ledger.write_audit(&mut w)?;
    }
    flush(w, &path)?;

    let path = dir.join(format!("{id}.trajectories.csv"));
    let mut w = create_file(&path)?;
    write_trajectories_csv(&mut w, &outcome.trajectories)?;
    flush(w, &path)?;

    let path = dir.join(format!("{id}.readings.csv"));
    let mut w = create_file(&path)?;
    write_readings_csv(&mut w, &outcome.readings)?;
    flush(w, &path)?;

    let path = dir.join(format!("{id}.reconstruction.csv"));
    let mut w = create_file(&path)?;
    reconstruct::write_reconstructions_csv(&mut w, &outcome.reconstructions)?;
    flush(w, &path)?;
    Ok(record_path)
}

/// Writes the generated world to `dir`: the resolved config, ground truth,
/// sensor error model, first-period candidates and demand.
pub fn write_scenario(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let world = World::generate(cfg)?;
    let mut written = Vec::new();

    let path = dir.join("scenario.toml");
    fs::write(&path, cfg.to_toml()).map_err(|source| io_error(&path, source))?;
    written.push(path);

    let path = dir.join("truth.csv");
    let mut w = create_file(&path)?;
    world.truth.write_csv(&mut w, "value")?;
    flush(w, &path)?;
    written.push(path);

    let path = dir.join("sensors.json");
    let mut w = create_file(&path)?;
    serde_json::to_writer_pretty(&mut w, &world.sensors)?;
    flush(w, &path)?;
    written.push(path);

    let fleet = world.synthesize_fleet(&world.start_positions(), 1);
    let path = dir.join("candidates.csv");
    let mut w = create_file(&path)?;
    write_trajectories_csv(&mut w, fleet.iter().flat_map(CandidateSet::candidates))?;
    flush(w, &path)?;
    written.push(path);

    let originals: Vec<&Trajectory> = fleet.iter().map(CandidateSet::original).collect();
    let demand = world.generate_demand(1, &originals)?;
    let path = dir.join("demand.csv");
    let mut w = create_file(&path)?;
    demand.write_csv(&mut w)?;
    flush(w, &path)?;
    written.push(path);
    Ok(written)
}

/// Scenario parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDimension {
    Budget,
    AcceptanceRate,
    /// Upper end `v` of the noise range; sensors draw `σ ~ U[v/10, v]`.
    SensingErrorLevel,
    PredictionErrorLevel,
    Beta,
}

impl SweepDimension {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepDimension::Budget => "budget",
            SweepDimension::AcceptanceRate => "acceptance_rate",
            SweepDimension::SensingErrorLevel => "sensing_error_level",
            SweepDimension::PredictionErrorLevel => "prediction_error_level",
            SweepDimension::Beta => "beta",
        }
    }

    /// `base` with this dimension set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> ScenarioConfig {
        let mut cfg = base.clone();
        match self {
            SweepDimension::Budget => cfg.incentive.budget = value,
            SweepDimension::AcceptanceRate => cfg.acceptance_rate = value,
            SweepDimension::SensingErrorLevel => {
                cfg.sensors.noise_min = value / 10.0;
                cfg.sensors.noise_max = value;
                cfg.sensors.noise = None;
            }
            SweepDimension::PredictionErrorLevel => cfg.prediction_error = value,
            SweepDimension::Beta => cfg.asq.beta = value,
        }
        cfg
    }
}

fn default_schema_version() -> u32 {
    crate::scenario::SCHEMA_VERSION
}

fn default_repetitions() -> usize {
    1
}

fn default_dispatchers() -> Vec<DispatcherKind> {
    DispatcherKind::ALL.to_vec()
}

/// A Cartesian sweep over values × repetitions × dispatchers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub name: String,
    pub dimension: SweepDimension,
    pub values: Vec<f64>,
    /// Repetition `r` runs with seed `base.seed + r`.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_dispatchers")]
    pub dispatchers: Vec<DispatcherKind>,
    #[serde(default)]
    pub base: ScenarioConfig,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| ExperimentError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ExperimentError::Spec(m.to_string()).into());
        if self.schema_version != crate::scenario::SCHEMA_VERSION {
            return fail("unsupported schema_version");
        }
        if self.name.trim().is_empty() {
            return fail("name must not be empty");
        }
        if self.values.is_empty() {
            return fail("values must not be empty");
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return fail("values must be finite");
        }
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1");
        }
        if self.dispatchers.is_empty() {
            return fail("dispatchers must not be empty");
        }
        self.base.validate()?;
        Ok(())
    }

    /// Every run of the sweep, in table order.
    pub fn jobs(&self) -> Vec<SweepJob> {
        let mut out = Vec::new();
        for &value in &self.values {
            for repetition in 0..self.repetitions {
                for &dispatcher in &self.dispatchers {
                    let mut config = self.dimension.apply(&self.base, value);
                    config.seed = self.base.seed.wrapping_add(repetition as u64);
                    out.push(SweepJob {
                        value,
                        repetition,
                        dispatcher,
                        config,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SweepJob {
    pub value: f64,
    pub repetition: usize,
    pub dispatcher: DispatcherKind,
    pub config: ScenarioConfig,
}

/// One row of the merged sweep table. Metric columns are empty when the
/// run failed; `error` then carries the failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: String,
    pub dimension: String,
    pub value: f64,
    pub repetition: usize,
    pub dispatcher: DispatcherKind,
    pub seed: u64,
    pub run_id: String,
    pub config_hash: String,
    pub budget: f64,
    pub acceptance_rate: f64,
    pub noise_min: f64,
    pub noise_max: f64,
    pub prediction_error: f64,
    pub beta: f64,
    pub entropy: Option<f64>,
    pub coverage_q: Option<usize>,
    pub asq: Option<f64>,
    pub asq_na: Option<f64>,
    pub r_rmse_idw: Option<f64>,
    pub r_rmse_kernel: Option<f64>,
    pub s_mae: Option<f64>,
    pub err_reduction_pct: Option<f64>,
    pub spend: Option<f64>,
    pub dispatched: Option<usize>,
    pub error: String,
}

impl SweepRow {
    fn new(spec: &SweepSpec, job: &SweepJob, outcome: std::result::Result<&RunRecord, String>) -> Self {
        let cfg = &job.config;
        let mut row = SweepRow {
            sweep: spec.name.clone(),
            dimension: spec.dimension.as_str().to_string(),
            value: job.value,
            repetition: job.repetition,
            dispatcher: job.dispatcher,
            seed: cfg.seed,
            run_id: run_id(cfg, job.dispatcher),
            config_hash: cfg.hash(),
            budget: cfg.incentive.budget,
            acceptance_rate: cfg.acceptance_rate,
            noise_min: cfg.sensors.noise_min,
            noise_max: cfg.sensors.noise_max,
            prediction_error: cfg.prediction_error,
            beta: cfg.asq.beta,
            entropy: None,
            coverage_q: None,
            asq: None,
            asq_na: None,
            r_rmse_idw: None,
            r_rmse_kernel: None,
            s_mae: None,
            err_reduction_pct: None,
            spend: None,
            dispatched: None,
            error: String::new(),
        };
        match outcome {
            Ok(r) => {
                row.entropy = Some(r.entropy);
                row.coverage_q = Some(r.coverage_q);
                row.asq = Some(r.asq);
                row.asq_na = Some(r.asq_na);
                row.r_rmse_idw = r.r_rmse_by_algo.get("idw").copied();
                row.r_rmse_kernel = r.r_rmse_by_algo.get("kernel").copied();
                row.s_mae = Some(r.s_mae);
                row.err_reduction_pct = Some(r.err_reduction_pct);
                row.spend = Some(r.spend);
                row.dispatched = Some(r.dispatched);
            }
            Err(e) => row.error = e,
        }
        row
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }
}

/// Runs every job of the sweep on `jobs` worker threads. Failed runs become
/// rows with an error tag. When `out` is given, each successful record is
/// written to `out/<name>/<run-id>.json` and the merged table to
/// `out/<name>/results.csv`.
pub fn run_sweep(spec: &SweepSpec, jobs: usize, out: Option<&Path>) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let dir = out.map(|o| o.join(&spec.name));
    if let Some(d) = &dir {
        create_dir(d)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Spec(format!("thread pool: {e}")))?;
    let work = spec.jobs();
    let rows: Vec<SweepRow> = pool.install(|| {
        work.par_iter()
            .map(|job| {
                let result = run(&job.config, job.dispatcher).and_then(|o| {
                    if let Some(d) = &dir {
                        write_record(&o.record, &d.join(format!("{}.json", o.record.run_id)))?;
                    }
                    Ok(o.record)
                });
                match result {
                    Ok(record) => SweepRow::new(spec, job, Ok(&record)),
                    Err(e) => {
                        warn!("sweep {} value {} failed: {e}", spec.name, job.value);
                        SweepRow::new(spec, job, Err(e.to_string()))
                    }
                }
            })
            .collect()
    });
    if let Some(d) = &dir {
        let path = d.join("results.csv");
        let w = create_file(&path)?;
        write_sweep_csv(w, &rows).map_err(|e| io_error(&path, e))?;
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row).map_err(std::io::Error::other)?;
    }
    wtr.flush()
}

pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let row: SweepRow = row.map_err(|e| ExperimentError::Table {
            line: i + 2,
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

/// Median of `f` over rows grouped by `(value, dispatcher)`, ignoring failed
/// rows.
pub fn median_by_value(
    rows: &[SweepRow],
    f: impl Fn(&SweepRow) -> Option<f64>,
) -> BTreeMap<(String, DispatcherKind), f64> {
    let mut groups: BTreeMap<(String, DispatcherKind), Vec<f64>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.is_ok()) {
        if let Some(v) = f(row) {
            groups
                .entry((format!("{}", row.value), row.dispatcher))
                .or_default()
                .push(v);
        }
    }
    groups
        .into_iter()
        .filter_map(|(k, v)| metrics::median(&v).map(|m| (k, m)))
        .collect()
}

/// Minimum number of runs for a correlation report.
pub const MIN_CORRELATION_RUNS: usize = 10;

/// Spearman correlation between ASQ and R-RMSE for each reconstructor.
/// `None` marks an undefined correlation (a constant column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub runs: usize,
    pub spearman: BTreeMap<String, Option<f64>>,
}

/// Correlation from `(asq, r_rmse per reconstructor)` pairs.
pub fn correlate(runs: &[(f64, BTreeMap<String, f64>)]) -> Result<CorrelationReport> {
    if runs.len() < MIN_CORRELATION_RUNS {
        return Err(ExperimentError::InsufficientRuns {
            needed: MIN_CORRELATION_RUNS,
            got: runs.len(),
        }
        .into());
    }
    let algos: Vec<&String> = runs[0].1.keys().collect();
    let mut spearman = BTreeMap::new();
    for algo in algos {
        let (asq, rmse): (Vec<f64>, Vec<f64>) = runs.iter().filter_map(|(a, m)| m.get(algo).map(|r| (*a, *r))).unzip();
        let rho = if asq.len() < MIN_CORRELATION_RUNS {
            None
        } else {
            metrics::spearman(&asq, &rmse)
        };
        spearman.insert(algo.clone(), rho);
    }
    Ok(CorrelationReport {
        runs: runs.len(),
        spearman,
    })
}

pub fn correlate_records(records: &[RunRecord]) -> Result<CorrelationReport> {
    let runs: Vec<_> = records.iter().map(|r| (r.asq, r.r_rmse_by_algo.clone())).collect();
    correlate(&runs)
}

/// Correlation over the successful rows of a sweep table.
pub fn correlate_rows(rows: &[SweepRow]) -> Result<CorrelationReport> {
    let runs: Vec<_> = rows
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| {
            let asq = r.asq?;
            let mut m = BTreeMap::new();
            if let Some(v) = r.r_rmse_idw {
                m.insert("idw".to_string(), v);
            }
            if let Some(v) = r.r_rmse_kernel {
                m.insert("kernel".to_string(), v);
            }
            Some((asq, m))
        })
        .collect();
    correlate(&runs)
}
