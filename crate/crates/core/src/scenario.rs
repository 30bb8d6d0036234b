//! Synthetic worlds: configuration, grid layout, ground truth, sensor error
//! models, candidate trajectories, prediction error, readings, demand and
//! trajectory CSV ingestion.
//!
//! Mobility is a demand-biased random walk: at every slot a vehicle stays or
//! moves to a free 4-neighbour with probability proportional to
//! `exp(κ·A(cell))`, where `A ∈ [0, 1]` is the normalised hotspot
//! attraction. Alternate candidates head for target cells drawn with
//! probability `∝ 1 / (1 + occupancy)`, so they lead into parts of the map
//! the original trajectories leave empty.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Read;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dispatch::{CandidateSet, DispatchError};
use crate::gridworld::{
    read_trajectory_rows, validate_trajectory, CellIndex, GridError, GridField, GridSpec, Trajectory,
};
use crate::incentive::{demand_probability, DemandField, IncentiveError};
use crate::metrics::{AsqConfig, EvalError};
use crate::reconstruct::ReconstructionConfig;
use crate::rng::{label, stream};
use crate::truth_discovery::SensorReading;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config field `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Incentive(#[from] IncentiveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn config_error(path: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub slot_minutes: f64,
    /// Number of excluded cells drawn at random (connectivity preserved).
    pub excluded_count: usize,
    /// Explicit excluded cells; overrides `excluded_count`.
    pub excluded: Option<Vec<[usize; 2]>>,
    /// Slots between dispatch decisions.
    pub actuation_period: usize,
    /// Number of actuation periods in a run.
    pub periods: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 15,
            height: 8,
            slot_minutes: 2.0,
            excluded_count: 42,
            excluded: None,
            actuation_period: 5,
            periods: 6,
        }
    }
}

impl GridConfig {
    pub fn horizon(&self) -> usize {
        self.actuation_period * self.periods
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub vehicles: usize,
    /// Alternate candidates per vehicle and period.
    pub candidates: usize,
    /// Strength `κ` of the pull toward high-demand cells.
    pub demand_bias: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            vehicles: 20,
            candidates: 3,
            demand_bias: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub noise_min: f64,
    pub noise_max: f64,
    pub bias_min: f64,
    pub bias_max: f64,
    /// Explicit per-sensor noise standard deviations (cycled if shorter
    /// than the fleet).
    pub noise: Option<Vec<f64>>,
    /// Explicit per-sensor biases (cycled if shorter than the fleet).
    pub bias: Option<Vec<f64>>,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            noise_min: 1.0,
            noise_max: 10.0,
            bias_min: -10.0,
            bias_max: 10.0,
            noise: None,
            bias: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthKind {
    Constant,
    Bumps,
    ValueNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub kind: TruthKind,
    /// Field minimum (or the constant level).
    pub base: f64,
    /// Max minus min of the generated field.
    pub amplitude: f64,
    pub bumps: usize,
    /// Maximum bump drift in cells per slot.
    pub drift: f64,
    /// Lattice spacing of the value-noise generator, in cells.
    pub lattice: usize,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            kind: TruthKind::Bumps,
            base: 40.0,
            amplitude: 60.0,
            bumps: 4,
            drift: 0.05,
            lattice: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hotspot {
    pub x: f64,
    pub y: f64,
    pub spread: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    /// Random hotspots drawn when `hotspots` is not given.
    pub hotspot_count: usize,
    pub spread: f64,
    pub hotspots: Option<Vec<Hotspot>>,
    /// Expected ride requests per slot at the strongest point.
    pub intensity: f64,
    /// Baseline share of the peak attraction present everywhere.
    pub floor: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            hotspot_count: 2,
            spread: 2.0,
            hotspots: None,
            intensity: 1.5,
            floor: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncentiveConfig {
    pub budget: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Currency per unit of expected demand; `r_max / actuation_period`
    /// when absent.
    pub r_u: Option<f64>,
    /// Flat incentive paid by the incentive-blind dispatcher; `r_max` when
    /// absent.
    pub constant: Option<f64>,
}

impl Default for IncentiveConfig {
    fn default() -> Self {
        Self {
            budget: 400.0,
            r_min: 2.0,
            r_max: 20.0,
            r_u: None,
            constant: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSettings {
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iterations: 100,
        }
    }
}

/// Everything needed to reproduce a run, apart from the dispatcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub acceptance_rate: f64,
    /// Mean displacement, in cells, of the predicted trajectories.
    pub prediction_error: f64,
    pub grid: GridConfig,
    pub fleet: FleetConfig,
    pub sensors: SensorConfig,
    pub truth: TruthConfig,
    pub demand: DemandConfig,
    pub incentive: IncentiveConfig,
    pub asq: AsqConfig,
    pub inference: InferenceSettings,
    pub reconstruction: ReconstructionConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "default".to_string(),
            seed: 1,
            acceptance_rate: 1.0,
            prediction_error: 0.0,
            grid: GridConfig::default(),
            fleet: FleetConfig::default(),
            sensors: SensorConfig::default(),
            truth: TruthConfig::default(),
            demand: DemandConfig::default(),
            incentive: IncentiveConfig::default(),
            asq: AsqConfig::default(),
            inference: InferenceSettings::default(),
            reconstruction: ReconstructionConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serialises to toml")
    }

    /// First error found, named by its dotted field path.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = |path: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_error(path, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |path: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_error(path, format!("must be non-negative, got {v}")))
            }
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.acceptance_rate) {
            return Err(config_error("acceptance_rate", "must lie in [0, 1]"));
        }
        non_negative("prediction_error", self.prediction_error)?;

        let g = &self.grid;
        if g.width == 0 {
            return Err(config_error("grid.width", "must be at least 1"));
        }
        if g.height == 0 {
            return Err(config_error("grid.height", "must be at least 1"));
        }
        positive("grid.slot_minutes", g.slot_minutes)?;
        if g.actuation_period == 0 {
            return Err(config_error("grid.actuation_period", "must be at least 1"));
        }
        if g.periods == 0 {
            return Err(config_error("grid.periods", "must be at least 1"));
        }
        let cells = g.width * g.height;
        match &g.excluded {
            Some(list) => {
                for (i, &[x, y]) in list.iter().enumerate() {
                    if x == 0 || y == 0 || x > g.width || y > g.height {
                        return Err(config_error(
                            &format!("grid.excluded[{i}]"),
                            format!("({x},{y}) is outside the grid"),
                        ));
                    }
                }
                let distinct: BTreeSet<_> = list.iter().collect();
                if distinct.len() >= cells {
                    return Err(config_error("grid.excluded", "leaves no free cell"));
                }
            }
            None => {
                if g.excluded_count >= cells {
                    return Err(config_error("grid.excluded_count", "leaves no free cell"));
                }
            }
        }

        if self.fleet.vehicles == 0 {
            return Err(config_error("fleet.vehicles", "must be at least 1"));
        }
        non_negative("fleet.demand_bias", self.fleet.demand_bias)?;
        let free = match &g.excluded {
            Some(list) => cells - list.iter().collect::<BTreeSet<_>>().len(),
            None => cells - g.excluded_count,
        };
        if self.fleet.vehicles > free {
            return Err(config_error(
                "fleet.vehicles",
                format!("{} vehicles do not fit on {free} free cells", self.fleet.vehicles),
            ));
        }

        let s = &self.sensors;
        non_negative("sensors.noise_min", s.noise_min)?;
        non_negative("sensors.noise_max", s.noise_max)?;
        if s.noise_min > s.noise_max {
            return Err(config_error("sensors.noise_max", "must be at least noise_min"));
        }
        if !(s.bias_min.is_finite() && s.bias_max.is_finite()) || s.bias_min > s.bias_max {
            return Err(config_error("sensors.bias_max", "must be finite and at least bias_min"));
        }
        if let Some(v) = &s.noise {
            if v.is_empty() {
                return Err(config_error("sensors.noise", "must not be empty"));
            }
            for (i, &n) in v.iter().enumerate() {
                non_negative(&format!("sensors.noise[{i}]"), n)?;
            }
        }
        if let Some(v) = &s.bias {
            if v.is_empty() {
                return Err(config_error("sensors.bias", "must not be empty"));
            }
            if let Some(i) = v.iter().position(|b| !b.is_finite()) {
                return Err(config_error(&format!("sensors.bias[{i}]"), "must be finite"));
            }
        }

        let t = &self.truth;
        if !t.base.is_finite() {
            return Err(config_error("truth.base", "must be finite"));
        }
        non_negative("truth.amplitude", t.amplitude)?;
        non_negative("truth.drift", t.drift)?;
        if t.kind == TruthKind::Bumps && t.bumps == 0 {
            return Err(config_error("truth.bumps", "must be at least 1"));
        }
        if t.kind == TruthKind::ValueNoise && t.lattice == 0 {
            return Err(config_error("truth.lattice", "must be at least 1"));
        }

        let d = &self.demand;
        positive("demand.spread", d.spread)?;
        non_negative("demand.intensity", d.intensity)?;
        if !(0.0..=1.0).contains(&d.floor) {
            return Err(config_error("demand.floor", "must lie in [0, 1]"));
        }
        if let Some(hs) = &d.hotspots {
            for (i, h) in hs.iter().enumerate() {
                positive(&format!("demand.hotspots[{i}].spread"), h.spread)?;
                non_negative(&format!("demand.hotspots[{i}].weight"), h.weight)?;
                if !(h.x.is_finite() && h.y.is_finite()) {
                    return Err(config_error(&format!("demand.hotspots[{i}]"), "centre must be finite"));
                }
            }
        }

        let inc = &self.incentive;
        non_negative("incentive.budget", inc.budget)?;
        positive("incentive.r_min", inc.r_min)?;
        positive("incentive.r_max", inc.r_max)?;
        if inc.r_min > inc.r_max {
            return Err(config_error("incentive.r_max", "must be at least r_min"));
        }
        if let Some(r_u) = inc.r_u {
            non_negative("incentive.r_u", r_u)?;
        }
        if let Some(c) = inc.constant {
            positive("incentive.constant", c)?;
        }

        if !(0.0..=1.0).contains(&self.asq.beta) {
            return Err(config_error("asq.beta", "must lie in [0, 1]"));
        }
        positive("inference.epsilon", self.inference.epsilon)?;
        if self.inference.max_iterations == 0 {
            return Err(config_error("inference.max_iterations", "must be at least 1"));
        }
        positive("reconstruction.length_scale", self.reconstruction.length_scale)?;
        non_negative("reconstruction.noise", self.reconstruction.noise)?;
        positive("reconstruction.idw_power", self.reconstruction.idw_power)?;
        Ok(())
    }

    /// Stable hash of the configuration: SHA-256 of its JSON encoding,
    /// first 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario config serialises to json");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Free cells and shortest-path distances between them.
#[derive(Debug, Clone)]
pub struct Mobility {
    width: usize,
    height: usize,
    free: Vec<(usize, usize)>,
    slot: Vec<Option<usize>>,
    /// Hop distance between free cells, `usize::MAX` when disconnected.
    distance: Vec<Vec<usize>>,
    neighbours: Vec<Vec<usize>>,
}

impl Mobility {
    pub fn new(grid: &GridSpec) -> Self {
        let free = grid.free_cells();
        let mut slot = vec![None; grid.width() * grid.height()];
        for (i, &(x, y)) in free.iter().enumerate() {
            slot[(y - 1) * grid.width() + (x - 1)] = Some(i);
        }
        let neighbours: Vec<Vec<usize>> = free
            .iter()
            .map(|&(x, y)| {
                grid.neighbors(x, y)
                    .filter_map(|(nx, ny)| slot[(ny - 1) * grid.width() + (nx - 1)])
                    .collect()
            })
            .collect();
        let distance = (0..free.len())
            .map(|src| {
                let mut d = vec![usize::MAX; free.len()];
                d[src] = 0;
                let mut queue = VecDeque::from([src]);
                while let Some(u) = queue.pop_front() {
                    for &v in &neighbours[u] {
                        if d[v] == usize::MAX {
                            d[v] = d[u] + 1;
                            queue.push_back(v);
                        }
                    }
                }
                d
            })
            .collect();
        Self {
            width: grid.width(),
            height: grid.height(),
            free,
            slot,
            distance,
            neighbours,
        }
    }

    pub fn free_cells(&self) -> &[(usize, usize)] {
        &self.free
    }

    fn index(&self, x: usize, y: usize) -> Option<usize> {
        if x == 0 || y == 0 || x > self.width || y > self.height {
            return None;
        }
        self.slot[(y - 1) * self.width + (x - 1)]
    }

    /// Hop distance between two free cells.
    pub fn distance(&self, a: (usize, usize), b: (usize, usize)) -> Option<usize> {
        let d = self.distance[self.index(a.0, a.1)?][self.index(b.0, b.1)?];
        (d != usize::MAX).then_some(d)
    }

    /// The cell itself followed by its free neighbours.
    fn moves(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(i).chain(self.neighbours[i].iter().copied())
    }

    pub fn is_connected(&self) -> bool {
        self.free.is_empty() || self.distance[0].iter().all(|&d| d != usize::MAX)
    }
}

/// Grid with `excluded_count` random excluded cells, keeping the free cells
/// 4-connected.
pub fn generate_grid(cfg: &GridConfig, seed: u64) -> Result<GridSpec, ScenarioError> {
    let horizon = cfg.horizon();
    if let Some(list) = &cfg.excluded {
        return Ok(GridSpec::new(
            cfg.width,
            cfg.height,
            horizon,
            cfg.slot_minutes,
            list.iter().map(|&[x, y]| (x, y)),
        )?);
    }
    let mut rng = stream(seed, &[label::GRID]);
    let mut order: Vec<(usize, usize)> = (1..=cfg.height)
        .flat_map(|y| (1..=cfg.width).map(move |x| (x, y)))
        .collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut excluded = BTreeSet::new();
    for cell in order {
        if excluded.len() == cfg.excluded_count {
            break;
        }
        excluded.insert(cell);
        let g = GridSpec::new(cfg.width, cfg.height, 1, cfg.slot_minutes, excluded.iter().copied())?;
        if !Mobility::new(&g).is_connected() {
            excluded.remove(&cell);
        }
    }
    if excluded.len() < cfg.excluded_count {
        return Err(config_error(
            "grid.excluded_count",
            format!(
                "only {} cells can be excluded without disconnecting the map",
                excluded.len()
            ),
        ));
    }
    Ok(GridSpec::new(
        cfg.width,
        cfg.height,
        horizon,
        cfg.slot_minutes,
        excluded,
    )?)
}

/// Deterministic synthetic ground truth over the whole horizon. Bump and
/// value-noise fields span exactly `[base, base + amplitude]` over the free
/// cells; excluded cells hold `base`.
pub fn generate_ground_truth(grid: &GridSpec, cfg: &TruthConfig, seed: u64) -> GridField {
    let mut rng = stream(seed, &[label::TRUTH]);
    let raw: Box<dyn Fn(usize, usize, usize) -> f64> = match cfg.kind {
        TruthKind::Constant => return GridField::filled(grid, cfg.base),
        TruthKind::Bumps => {
            let bumps: Vec<[f64; 6]> = (0..cfg.bumps)
                .map(|_| {
                    [
                        rng.random_range(1.0..=grid.width() as f64),
                        rng.random_range(1.0..=grid.height() as f64),
                        rng.random_range(1.5..=4.0),
                        rng.random_range(0.3..=1.0),
                        rng.random_range(-cfg.drift..=cfg.drift),
                        rng.random_range(-cfg.drift..=cfg.drift),
                    ]
                })
                .collect();
            Box::new(move |x, y, t| {
                bumps
                    .iter()
                    .map(|&[cx, cy, s, a, vx, vy]| {
                        let dx = x as f64 - (cx + vx * t as f64);
                        let dy = y as f64 - (cy + vy * t as f64);
                        a * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp()
                    })
                    .sum()
            })
        }
        TruthKind::ValueNoise => {
            let step = cfg.lattice as f64;
            let lx = grid.width() / cfg.lattice + 2;
            let ly = grid.height() / cfg.lattice + 2;
            let frames = grid.horizon() / 10 + 2;
            let lattice: Vec<f64> = (0..lx * ly * frames).map(|_| rng.random::<f64>()).collect();
            Box::new(move |x, y, t| {
                let fx = (x - 1) as f64 / step;
                let fy = (y - 1) as f64 / step;
                let ft = (t - 1) as f64 / 10.0;
                let (ix, iy, it) = (fx as usize, fy as usize, ft as usize);
                let (ax, ay, at) = (fx - ix as f64, fy - iy as f64, ft - it as f64);
                let at_frame = |f: usize| {
                    let v = |i: usize, j: usize| lattice[(f * ly + j) * lx + i];
                    let top = v(ix, iy) * (1.0 - ax) + v(ix + 1, iy) * ax;
                    let bottom = v(ix, iy + 1) * (1.0 - ax) + v(ix + 1, iy + 1) * ax;
                    top * (1.0 - ay) + bottom * ay
                };
                at_frame(it) * (1.0 - at) + at_frame(it + 1) * at
            })
        }
    };
    let raw_field = GridField::from_fn(grid, |x, y, t| if grid.is_free(x, y) { raw(x, y, t) } else { 0.0 });
    let (lo, hi) = raw_field
        .free_cells()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    GridField::from_fn(grid, |x, y, t| {
        if grid.is_free(x, y) && span > 0.0 {
            cfg.base + cfg.amplitude * (raw_field.get(x, y, t) - lo) / span
        } else {
            cfg.base
        }
    })
}

/// Per-sensor noise standard deviation and constant bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorErrorModel {
    pub noise: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SensorErrorModel {
    /// Explicit lists are cycled over the fleet; otherwise parameters are
    /// drawn uniformly once per scenario.
    pub fn generate(cfg: &SensorConfig, sensors: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[label::SENSORS]);
        let mut noise = Vec::with_capacity(sensors);
        let mut bias = Vec::with_capacity(sensors);
        for c in 0..sensors {
            let n = if cfg.noise_max > cfg.noise_min {
                rng.random_range(cfg.noise_min..=cfg.noise_max)
            } else {
                cfg.noise_min
            };
            let b = if cfg.bias_max > cfg.bias_min {
                rng.random_range(cfg.bias_min..=cfg.bias_max)
            } else {
                cfg.bias_min
            };
            noise.push(cfg.noise.as_ref().map_or(n, |v| v[c % v.len()]));
            bias.push(cfg.bias.as_ref().map_or(b, |v| v[c % v.len()]));
        }
        Self { noise, bias }
    }

    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    /// Weights the estimator would reach with exact residual shares:
    /// `−ln(σ_c² / Σ σ²)`, or `ln C` when every sensor is noise-free.
    pub fn reference_weights(&self) -> Vec<f64> {
        let total: f64 = self.noise.iter().map(|s| s * s).sum();
        let c = self.noise.len() as f64;
        self.noise
            .iter()
            .map(|s| {
                if total > 0.0 {
                    -((s * s).max(1e-12 * total) / total).ln()
                } else {
                    c.ln()
                }
            })
            .collect()
    }
}

/// One reading per occupied slot: `g + β_c + N(0, σ_c²)`. The noise of
/// sensor `c` at slot `t` comes from its own stream, so it does not depend
/// on where the vehicle is.
pub fn sample_readings(
    truth: &GridField,
    trajectories: &[&Trajectory],
    model: &SensorErrorModel,
    seed: u64,
) -> Vec<SensorReading> {
    let mut out = Vec::new();
    for traj in trajectories {
        let c = traj.vehicle;
        let sigma = model.noise.get(c).copied().unwrap_or(0.0);
        let beta = model.bias.get(c).copied().unwrap_or(0.0);
        for &cell in traj.cells() {
            let noise = if sigma > 0.0 {
                let mut rng = stream(seed, &[label::READINGS, c as u64, cell.t as u64]);
                Normal::new(0.0, sigma).map(|n| n.sample(&mut rng)).unwrap_or(0.0)
            } else {
                0.0
            };
            out.push(SensorReading {
                sensor: c,
                cell,
                value: truth.at(cell) + beta + noise,
            });
        }
    }
    out
}

/// Hotspots from the config, or `hotspot_count` random ones on free cells.
pub fn generate_hotspots(grid: &GridSpec, cfg: &DemandConfig, seed: u64) -> Vec<Hotspot> {
    if let Some(h) = &cfg.hotspots {
        return h.clone();
    }
    let mut rng = stream(seed, &[label::HOTSPOTS]);
    let free = grid.free_cells();
    let mut out = Vec::with_capacity(cfg.hotspot_count);
    for _ in 0..cfg.hotspot_count {
        let Some(&(x, y)) = free.choose(&mut rng) else { break };
        out.push(Hotspot {
            x: x as f64,
            y: y as f64,
            spread: cfg.spread,
            weight: rng.random_range(0.5..=1.0),
        });
    }
    out
}

/// Attraction per free cell, indexed like [`Mobility::free_cells`]:
/// `floor + (1 − floor)·h / max h` where `h` is the hotspot mixture.
pub fn attraction(mobility: &Mobility, hotspots: &[Hotspot], floor: f64) -> Vec<f64> {
    let h: Vec<f64> = mobility
        .free
        .iter()
        .map(|&(x, y)| {
            hotspots
                .iter()
                .map(|s| {
                    let dx = x as f64 - s.x;
                    let dy = y as f64 - s.y;
                    s.weight * (-(dx * dx + dy * dy) / (2.0 * s.spread * s.spread)).exp()
                })
                .sum()
        })
        .collect();
    let peak = h.iter().copied().fold(0.0, f64::max);
    h.iter()
        .map(|&v| floor + (1.0 - floor) * if peak > 0.0 { v / peak } else { 0.0 })
        .collect()
}

fn weighted_pick<R: Rng>(rng: &mut R, options: &[usize], weight: impl Fn(usize) -> f64) -> usize {
    let weights: Vec<f64> = options.iter().map(|&o| weight(o)).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return options[rng.random_range(0..options.len())];
    }
    let mut u = rng.random::<f64>() * total;
    for (o, w) in options.iter().zip(&weights) {
        if u < *w {
            return *o;
        }
        u -= w;
    }
    *options.last().expect("non-empty options")
}

/// Static parts of a generated scenario.
#[derive(Debug, Clone)]
pub struct World {
    pub config: ScenarioConfig,
    pub grid: GridSpec,
    pub truth: GridField,
    pub sensors: SensorErrorModel,
    pub hotspots: Vec<Hotspot>,
    pub mobility: Mobility,
    /// Attraction per free cell, in [`Mobility::free_cells`] order.
    pub attraction: Vec<f64>,
}

impl World {
    pub fn generate(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let seed = config.seed;
        let grid = generate_grid(&config.grid, seed)?;
        let mobility = Mobility::new(&grid);
        if config.fleet.vehicles > mobility.free.len() {
            return Err(config_error("fleet.vehicles", "grid too small for the fleet"));
        }
        let truth = generate_ground_truth(&grid, &config.truth, seed);
        let sensors = SensorErrorModel::generate(&config.sensors, config.fleet.vehicles, seed);
        let hotspots = generate_hotspots(&grid, &config.demand, seed);
        let attraction = attraction(&mobility, &hotspots, config.demand.floor);
        Ok(Self {
            config: config.clone(),
            grid,
            truth,
            sensors,
            hotspots,
            mobility,
            attraction,
        })
    }

    /// Grid of one actuation window.
    pub fn window_grid(&self) -> GridSpec {
        self.grid
            .with_horizon(self.config.grid.actuation_period)
            .expect("actuation period is positive")
    }

    fn move_weight(&self, cell: usize) -> f64 {
        (self.config.fleet.demand_bias * self.attraction[cell]).exp()
    }

    /// Initial positions, drawn with the same demand bias as the walk.
    pub fn start_positions(&self) -> Vec<(usize, usize)> {
        let mut rng = stream(self.config.seed, &[label::START]);
        let all: Vec<usize> = (0..self.mobility.free.len()).collect();
        (0..self.config.fleet.vehicles)
            .map(|_| self.mobility.free[weighted_pick(&mut rng, &all, |i| self.move_weight(i))])
            .collect()
    }

    /// Candidate sets for one period in window time (slots
    /// `1..=actuation_period`). Vehicle `c` starts next to `positions[c]`.
    pub fn synthesize_fleet(&self, positions: &[(usize, usize)], period: usize) -> Vec<CandidateSet> {
        let len = self.config.grid.actuation_period;
        let seed = self.config.seed;
        let m = &self.mobility;

        let originals: Vec<Vec<usize>> = positions
            .iter()
            .enumerate()
            .map(|(c, &(x, y))| {
                let mut rng = stream(seed, &[label::ORIGINAL, period as u64, c as u64]);
                let mut at = m.index(x, y).expect("vehicle on a free cell");
                (0..len)
                    .map(|_| {
                        let options: Vec<usize> = m.moves(at).collect();
                        at = weighted_pick(&mut rng, &options, |o| self.move_weight(o));
                        at
                    })
                    .collect()
            })
            .collect();

        let mut occupancy = vec![0usize; m.free.len()];
        for path in &originals {
            for &i in path {
                occupancy[i] += 1;
            }
        }
        let all: Vec<usize> = (0..m.free.len()).collect();

        positions
            .iter()
            .enumerate()
            .map(|(c, &(x, y))| {
                let start = m.index(x, y).expect("vehicle on a free cell");
                let mut rng = stream(seed, &[label::ALTERNATE, period as u64, c as u64]);
                let mut paths: Vec<Vec<usize>> = vec![originals[c].clone()];
                let mut attempts = 0;
                while paths.len() <= self.config.fleet.candidates {
                    attempts += 1;
                    let target = weighted_pick(&mut rng, &all, |i| 1.0 / (1.0 + occupancy[i] as f64));
                    let mut at = start;
                    let path: Vec<usize> = (0..len)
                        .map(|_| {
                            let options: Vec<usize> = m.moves(at).collect();
                            let best = options.iter().map(|&o| m.distance[o][target]).min().unwrap_or(0);
                            let closest: Vec<usize> =
                                options.into_iter().filter(|&o| m.distance[o][target] == best).collect();
                            at = *closest.choose(&mut rng).expect("a move always exists");
                            at
                        })
                        .collect();
                    if attempts > 20 || !paths.contains(&path) {
                        paths.push(path);
                    }
                }
                let candidates = paths
                    .into_iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let cells: Vec<(usize, usize)> = p.into_iter().map(|i| m.free[i]).collect();
                        Trajectory::from_path(c, k, 1, &cells)
                    })
                    .collect();
                CandidateSet::new(c, candidates).expect("candidates are labelled in order")
            })
            .collect()
    }

    /// Ride-request counts for one period: Poisson with mean
    /// `intensity · attraction` per cell and slot.
    pub fn generate_requests(&self, period: usize) -> GridField {
        let window = self.window_grid();
        let mut rng = stream(self.config.seed, &[label::DEMAND, period as u64]);
        let intensity = self.config.demand.intensity;
        GridField::from_fn(&window, |x, y, _| match self.mobility.index(x, y) {
            Some(i) if intensity > 0.0 => {
                let mean = intensity * self.attraction[i];
                Poisson::new(mean).map(|p| p.sample(&mut rng)).unwrap_or(0.0)
            }
            _ => 0.0,
        })
    }

    /// Demand probability for one period from sampled requests and the
    /// predicted original trajectories.
    pub fn generate_demand(
        &self,
        period: usize,
        predicted_originals: &[&Trajectory],
    ) -> Result<DemandField, ScenarioError> {
        let window = self.window_grid();
        let requests = self.generate_requests(period);
        let idle = idle_counts(&window, predicted_originals);
        Ok(demand_probability(&requests, &idle)?)
    }
}

/// Vehicles per cell and slot.
pub fn idle_counts(grid: &GridSpec, trajectories: &[&Trajectory]) -> GridField {
    let mut idle = GridField::zeros(grid);
    for t in trajectories {
        for c in t.cells() {
            if grid.contains(*c) {
                idle.add(c.x, c.y, c.t, 1.0);
            }
        }
    }
    idle
}

/// Displaces every cell of every candidate by a random Euclidean distance
/// with mean `level`: a radius `r ~ U[0, 2·level]` is drawn and the free
/// cell whose distance is closest to `r` is taken (random among ties).
pub fn inject_prediction_error(
    sets: &[CandidateSet],
    grid: &GridSpec,
    level: f64,
    seed: u64,
    period: usize,
) -> Vec<CandidateSet> {
    if level <= 0.0 {
        return sets.to_vec();
    }
    let free = grid.free_cells();
    sets.iter()
        .map(|set| {
            let perturbed = set
                .candidates()
                .iter()
                .map(|traj| {
                    let mut rng = stream(
                        seed,
                        &[
                            label::PREDICTION,
                            period as u64,
                            set.vehicle() as u64,
                            traj.candidate as u64,
                        ],
                    );
                    let cells = traj
                        .cells()
                        .iter()
                        .map(|c| {
                            let r = rng.random_range(0.0..=2.0 * level);
                            let dist = |&(x, y): &(usize, usize)| {
                                ((x as f64 - c.x as f64).powi(2) + (y as f64 - c.y as f64).powi(2)).sqrt()
                            };
                            let best = free.iter().map(|p| (dist(p) - r).abs()).fold(f64::INFINITY, f64::min);
                            let ties: Vec<&(usize, usize)> =
                                free.iter().filter(|p| (dist(p) - r).abs() <= best + 1e-9).collect();
                            let &(x, y) = *ties.choose(&mut rng).expect("grid has free cells");
                            CellIndex::new(x, y, c.t)
                        })
                        .collect();
                    Trajectory::new(traj.vehicle, traj.candidate, cells)
                })
                .collect();
            CandidateSet::new(set.vehicle(), perturbed).expect("labels are preserved")
        })
        .collect()
}

/// Mean Euclidean distance between matching cells of two candidate lists.
pub fn mean_displacement(a: &[CandidateSet], b: &[CandidateSet]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (sa, sb) in a.iter().zip(b) {
        for (ta, tb) in sa.candidates().iter().zip(sb.candidates()) {
            for (ca, cb) in ta.cells().iter().zip(tb.cells()) {
                sum += ((ca.x as f64 - cb.x as f64).powi(2) + (ca.y as f64 - cb.y as f64).powi(2)).sqrt();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Reads original trajectories from the trajectory CSV schema and checks
/// them against `grid`. Errors name the offending file line.
pub fn ingest_trajectory_csv<R: Read>(reader: R, grid: &GridSpec) -> Result<Vec<CandidateSet>, ScenarioError> {
    let rows = read_trajectory_rows(reader)?;
    let mut by_vehicle: BTreeMap<usize, Vec<(usize, CellIndex)>> = BTreeMap::new();
    for (line, row) in rows {
        let row_error = |message: String| ScenarioError::Row { line, message };
        if row.candidate_k != 0 {
            return Err(row_error(format!("candidate_k must be 0, got {}", row.candidate_k)));
        }
        let cell = CellIndex::new(row.x, row.y, row.t);
        if !grid.in_bounds(row.x, row.y) || row.t == 0 || row.t > grid.horizon() {
            return Err(row_error(format!("cell {cell} is outside the grid")));
        }
        if grid.is_excluded(row.x, row.y) {
            return Err(row_error(format!("cell {cell} is excluded")));
        }
        by_vehicle.entry(row.vehicle_id).or_default().push((line, cell));
    }
    let mut sets = Vec::with_capacity(by_vehicle.len());
    for (vehicle, mut cells) in by_vehicle {
        cells.sort_by_key(|(_, c)| c.t);
        for pair in cells.windows(2) {
            let ((_, a), (line, b)) = (pair[0], pair[1]);
            let message = if a.t == b.t {
                Some(format!("vehicle {vehicle} has two cells at slot {}", b.t))
            } else if b.t != a.t + 1 {
                Some(format!("vehicle {vehicle} skips slots {}..{}", a.t + 1, b.t - 1))
            } else if a.x.abs_diff(b.x) + a.y.abs_diff(b.y) > 1 {
                Some(format!("vehicle {vehicle} jumps from {a} to {b}"))
            } else {
                None
            };
            if let Some(message) = message {
                return Err(ScenarioError::Row { line, message });
            }
        }
        let traj = Trajectory::new(vehicle, 0, cells.into_iter().map(|(_, c)| c).collect());
        debug_assert!(validate_trajectory(&traj, grid).is_empty());
        sets.push(CandidateSet::original_only(traj));
    }
    Ok(sets)
}
