//! Bias-aware truth discovery.
//!
//! Every sensor `c` carries a reliability weight `w_c` and a constant bias
//! `b_c`. The estimator alternates three closed-form updates until the
//! inferred per-cell truth `m*` stops moving:
//!
//! * weights: `w_c = −ln(R_c / Σ_c' R_c')` where `R_c` is the sensor's total
//!   squared residual `Σ (m* − m_c + b_c)²`,
//! * biases: `b_c = mean(m_c − m*)` over the sensor's readings, then shifted
//!   so that `Σ b_c = 0`,
//! * truth: `m* = Σ w_c (m_c − b_c) / Σ w_c` over the sensors reading a cell.
//!
//! Weights are updated globally per sweep (the residual shares need every
//! cell) rather than cell by cell. After each sweep `Σ exp(−w_c) = 1` and
//! `Σ b_c = 0` hold to rounding.
//!
//! A cell read by a single sensor always has zero residual, so sensors whose
//! readings never share a cell with another sensor carry no reliability
//! evidence. Those sensors are assigned the mean residual of the evidenced
//! sensors, which keeps their weight finite and neutral.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{overlap_count, CellIndex, Trajectory};

/// Relative floor for a residual share of an evidenced sensor that agrees
/// perfectly with the inferred truth.
const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("no readings to aggregate")]
    NoReadings,
    #[error("reading for sensor {sensor} but only {sensor_count} sensors declared")]
    UnknownSensor { sensor: usize, sensor_count: usize },
    #[error("reading for sensor {sensor} at {cell} is not finite")]
    NonFinite { sensor: usize, cell: CellIndex },
    #[error("all sensors reading {0} have zero weight")]
    DegenerateWeights(CellIndex),
    #[error("no truth estimate for cell {0}")]
    MissingTruth(CellIndex),
    #[error("error bound must be positive and max iterations at least one")]
    BadConfig,
    #[error("readings csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor: usize,
    pub cell: CellIndex,
    pub value: f64,
}

/// Per-sensor weight, bias and overlap belief, indexed by sensor id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityState {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub belief: Vec<f64>,
}

impl ReliabilityState {
    /// `w_c = ln C`, `b_c = 0`: satisfies both constraints exactly.
    pub fn uniform(sensor_count: usize) -> Self {
        let w = (sensor_count.max(1) as f64).ln();
        Self {
            weight: vec![w; sensor_count],
            bias: vec![0.0; sensor_count],
            belief: vec![0.0; sensor_count],
        }
    }

    /// All weights equal to `value` (used to switch reliability off).
    pub fn constant_weight(sensor_count: usize, value: f64) -> Self {
        Self {
            weight: vec![value; sensor_count],
            bias: vec![0.0; sensor_count],
            belief: vec![0.0; sensor_count],
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.weight.len()
    }

    /// `|Σ exp(−w_c) − 1|`.
    pub fn normalization_error(&self) -> f64 {
        (self.weight.iter().map(|w| (-w).exp()).sum::<f64>() - 1.0).abs()
    }

    /// `|Σ b_c|`.
    pub fn bias_sum(&self) -> f64 {
        self.bias.iter().sum::<f64>().abs()
    }
}

/// Inferred truth on every cell that has at least one reading.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthField {
    values: BTreeMap<CellIndex, f64>,
}

impl TruthField {
    pub fn get(&self, cell: &CellIndex) -> Option<f64> {
        self.values.get(cell).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellIndex, f64)> + '_ {
        self.values.iter().map(|(c, v)| (*c, *v))
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.values.keys().copied()
    }

    fn max_abs_diff(&self, other: &TruthField) -> f64 {
        self.values
            .iter()
            .map(|(c, v)| match other.values.get(c) {
                Some(o) => (v - o).abs(),
                None => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

impl FromIterator<(CellIndex, f64)> for TruthField {
    fn from_iter<I: IntoIterator<Item = (CellIndex, f64)>>(iter: I) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}

const READING_HEADER: [&str; 5] = ["sensor_id", "t", "x", "y", "value"];

#[derive(Debug, Serialize, Deserialize)]
struct ReadingRow {
    sensor_id: usize,
    t: usize,
    x: usize,
    y: usize,
    value: f64,
}

/// Reads `sensor_id,t,x,y,value` rows.
pub fn read_readings_csv<R: Read>(reader: R) -> Result<Vec<SensorReading>, InferenceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| InferenceError::Csv(e.to_string()))?.clone();
    if headers.iter().ne(READING_HEADER) {
        return Err(InferenceError::Csv(format!(
            "line 1: expected header {}",
            READING_HEADER.join(",")
        )));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| InferenceError::Csv(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let row: ReadingRow = rec
                .deserialize(Some(&headers))
                .map_err(|e| InferenceError::Csv(format!("line {line}: {e}")))?;
            if row.x == 0 || row.y == 0 || row.t == 0 {
                return Err(InferenceError::Csv(format!("line {line}: coordinates are 1-based")));
            }
            Ok(SensorReading {
                sensor: row.sensor_id,
                cell: CellIndex::new(row.x, row.y, row.t),
                value: row.value,
            })
        })
        .collect()
}

/// Writes readings as `sensor_id,t,x,y,value` rows.
pub fn write_readings_csv<W: Write>(writer: W, readings: &[SensorReading]) -> Result<(), InferenceError> {
    let err = |e: csv::Error| InferenceError::Csv(e.to_string());
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(READING_HEADER).map_err(err)?;
    for r in readings {
        wtr.serialize(ReadingRow {
            sensor_id: r.sensor,
            t: r.cell.t,
            x: r.cell.x,
            y: r.cell.y,
            value: r.value,
        })
        .map_err(err)?;
    }
    wtr.flush().map_err(|e| InferenceError::Csv(e.to_string()))
}

/// Readings grouped by cell, in time-major cell order.
#[derive(Debug, Clone)]
pub struct CellReadings {
    cells: Vec<(CellIndex, Vec<(usize, f64)>)>,
    sensor_count: usize,
}

impl CellReadings {
    pub fn new(readings: &[SensorReading], sensor_count: usize) -> Result<Self, InferenceError> {
        let mut grouped: BTreeMap<CellIndex, Vec<(usize, f64)>> = BTreeMap::new();
        for r in readings {
            if r.sensor >= sensor_count {
                return Err(InferenceError::UnknownSensor {
                    sensor: r.sensor,
                    sensor_count,
                });
            }
            if !r.value.is_finite() {
                return Err(InferenceError::NonFinite {
                    sensor: r.sensor,
                    cell: r.cell,
                });
            }
            grouped.entry(r.cell).or_default().push((r.sensor, r.value));
        }
        Ok(Self {
            cells: grouped.into_iter().collect(),
            sensor_count,
        })
    }

    pub fn sensor_count(&self) -> usize {
        self.sensor_count
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellIndex, &[(usize, f64)])> + '_ {
        self.cells.iter().map(|(c, r)| (*c, r.as_slice()))
    }

    /// Number of readings per sensor.
    pub fn reading_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.sensor_count];
        for (_, rs) in &self.cells {
            for &(s, _) in rs {
                n[s] += 1;
            }
        }
        n
    }

    /// Readings per sensor that fall in a cell read by at least one other
    /// sensor.
    pub fn overlapping_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.sensor_count];
        for (_, rs) in &self.cells {
            let distinct: BTreeSet<usize> = rs.iter().map(|&(s, _)| s).collect();
            if distinct.len() >= 2 {
                for &(s, _) in rs {
                    n[s] += 1;
                }
            }
        }
        n
    }

    /// Sensors with at least one reading, ascending.
    pub fn active_sensors(&self) -> Vec<usize> {
        self.reading_counts()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(s, _)| s)
            .collect()
    }

    fn unweighted_means(&self) -> TruthField {
        self.cells
            .iter()
            .map(|(c, rs)| (*c, rs.iter().map(|r| r.1).sum::<f64>() / rs.len() as f64))
            .collect()
    }
}

/// `m* = Σ w_c (m_c − b_c) / Σ w_c` per cell.
pub fn aggregate_truth(readings: &CellReadings, weight: &[f64], bias: &[f64]) -> Result<TruthField, InferenceError> {
    let mut out = BTreeMap::new();
    for (cell, rs) in readings.iter() {
        let (num, den) = rs.iter().fold((0.0, 0.0), |(num, den), &(s, m)| {
            (num + weight[s] * (m - bias[s]), den + weight[s])
        });
        if den <= 0.0 {
            return Err(InferenceError::DegenerateWeights(cell));
        }
        out.insert(cell, num / den);
    }
    Ok(TruthField { values: out })
}

/// Total squared residual `Σ (m* − m_c + b_c)²` per sensor.
pub fn residual_sums(readings: &CellReadings, truth: &TruthField, bias: &[f64]) -> Result<Vec<f64>, InferenceError> {
    let mut r = vec![0.0; readings.sensor_count()];
    for (cell, rs) in readings.iter() {
        let m_star = truth.get(&cell).ok_or(InferenceError::MissingTruth(cell))?;
        for &(s, m) in rs {
            r[s] += (m_star - m + bias[s]).powi(2);
        }
    }
    Ok(r)
}

/// Weights from per-sensor residual sums. Sensors flagged without evidence
/// take the evidenced mean residual; a zero total gives `ln C` for everyone.
pub fn weights_from_residuals(residuals: &[f64], evidenced: &[bool]) -> Vec<f64> {
    let c = residuals.len();
    let uniform = vec![(c.max(1) as f64).ln(); c];
    let ev: Vec<f64> = residuals
        .iter()
        .zip(evidenced)
        .filter(|(_, &e)| e)
        .map(|(&r, _)| r)
        .collect();
    let ev_total: f64 = ev.iter().sum();
    if ev.is_empty() || ev_total <= 0.0 {
        return uniform;
    }
    let mean = ev_total / ev.len() as f64;
    let floor = RESIDUAL_FLOOR * ev_total;
    let effective: Vec<f64> = residuals
        .iter()
        .zip(evidenced)
        .map(|(&r, &e)| if e { r.max(floor) } else { mean })
        .collect();
    let total: f64 = effective.iter().sum();
    effective.iter().map(|r| -(r / total).ln()).collect()
}

/// Weight update over all sensors.
pub fn update_weights(readings: &CellReadings, truth: &TruthField, bias: &[f64]) -> Result<Vec<f64>, InferenceError> {
    let residuals = residual_sums(readings, truth, bias)?;
    let evidenced: Vec<bool> = readings.overlapping_counts().iter().map(|&n| n > 0).collect();
    Ok(weights_from_residuals(&residuals, &evidenced))
}

/// Mean of `m_c − m*` per sensor before centring. Sensors without readings
/// keep their previous bias.
pub fn raw_bias(readings: &CellReadings, truth: &TruthField, previous: &[f64]) -> Result<Vec<f64>, InferenceError> {
    let c = readings.sensor_count();
    let mut sum = vec![0.0; c];
    let mut n = vec![0usize; c];
    for (cell, rs) in readings.iter() {
        let m_star = truth.get(&cell).ok_or(InferenceError::MissingTruth(cell))?;
        for &(s, m) in rs {
            sum[s] += m - m_star;
            n[s] += 1;
        }
    }
    let raw = (0..c)
        .map(|s| {
            if n[s] > 0 {
                sum[s] / n[s] as f64
            } else {
                previous.get(s).copied().unwrap_or(0.0)
            }
        })
        .collect();
    Ok(raw)
}

/// Bias update: [`raw_bias`] re-centred to sum to zero.
pub fn update_bias(readings: &CellReadings, truth: &TruthField, previous: &[f64]) -> Result<Vec<f64>, InferenceError> {
    Ok(recenter(&raw_bias(readings, truth, previous)?))
}

/// Subtracts the mean so the values sum to zero.
pub fn recenter(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - mean).collect()
}

/// Weighted squared residual `Σ_cells Σ_c w_c (m* − m_c + b_c)²`.
pub fn objective(readings: &CellReadings, truth: &TruthField, weight: &[f64], bias: &[f64]) -> f64 {
    readings
        .iter()
        .map(|(cell, rs)| {
            let m_star = truth.get(&cell).unwrap_or(f64::NAN);
            rs.iter()
                .map(|&(s, m)| weight[s] * (m_star - m + bias[s]).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Previous outputs used to seed the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub truth: TruthField,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub warm_start: Option<WarmStart>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iterations: 100,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inference {
    pub truth: TruthField,
    pub state: ReliabilityState,
    pub iterations: usize,
    pub converged: bool,
    /// Fewer than two sensors contributed readings; weights are not
    /// identifiable and were left at `ln C`.
    pub degenerate: bool,
    pub objective_trace: Vec<f64>,
    /// Running sum of unweighted squared residuals; diagnostic only.
    pub lagrangian: f64,
    /// Sweeps in which the objective rose.
    pub objective_increases: usize,
}

impl Inference {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            truth: self.truth.clone(),
            weight: self.state.weight.clone(),
            bias: self.state.bias.clone(),
        }
    }
}

/// Runs the alternating weight/bias/truth updates until the largest change
/// of `m*` is within `epsilon` or the iteration budget is spent.
pub fn infer(
    readings: &[SensorReading],
    sensor_count: usize,
    config: &InferenceConfig,
) -> Result<Inference, InferenceError> {
    if !(config.epsilon > 0.0) || config.max_iterations == 0 {
        return Err(InferenceError::BadConfig);
    }
    let groups = CellReadings::new(readings, sensor_count)?;
    if groups.is_empty() {
        return Err(InferenceError::NoReadings);
    }

    if groups.active_sensors().len() < 2 {
        let state = ReliabilityState::uniform(sensor_count);
        let truth = aggregate_truth(&groups, &state.weight, &state.bias).unwrap_or_else(|_| groups.unweighted_means());
        let f = objective(&groups, &truth, &state.weight, &state.bias);
        return Ok(Inference {
            truth,
            state,
            iterations: 0,
            converged: true,
            degenerate: true,
            objective_trace: vec![f],
            lagrangian: 0.0,
            objective_increases: 0,
        });
    }

    let (mut weight, mut bias, mut truth) = match &config.warm_start {
        Some(ws) => {
            let uniform = (sensor_count as f64).ln();
            let weight: Vec<f64> = (0..sensor_count)
                .map(|s| ws.weight.get(s).copied().unwrap_or(uniform))
                .collect();
            let bias: Vec<f64> = (0..sensor_count)
                .map(|s| ws.bias.get(s).copied().unwrap_or(0.0))
                .collect();
            // cells not covered by the previous estimate are seeded from the
            // previous weights, falling back to a plain mean
            let seeded = aggregate_truth(&groups, &weight, &bias).unwrap_or_else(|_| groups.unweighted_means());
            let truth: TruthField = seeded.iter().map(|(c, v)| (c, ws.truth.get(&c).unwrap_or(v))).collect();
            (weight, bias, truth)
        }
        None => {
            let state = ReliabilityState::uniform(sensor_count);
            (state.weight, state.bias, groups.unweighted_means())
        }
    };

    let mut trace = vec![objective(&groups, &truth, &weight, &bias)];
    let mut lagrangian = 0.0;
    let mut increases = 0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iterations {
        iterations = it;
        lagrangian += groups
            .iter()
            .map(|(cell, rs)| {
                let m_star = truth.get(&cell).unwrap_or(0.0);
                rs.iter().map(|&(_, m)| (m_star - m).powi(2)).sum::<f64>()
            })
            .sum::<f64>();

        weight = update_weights(&groups, &truth, &bias)?;
        bias = update_bias(&groups, &truth, &bias)?;
        let next = aggregate_truth(&groups, &weight, &bias)?;
        let delta = next.max_abs_diff(&truth);
        truth = next;

        let f = objective(&groups, &truth, &weight, &bias);
        if let Some(&prev) = trace.last() {
            if f > prev * (1.0 + 1e-12) + 1e-12 {
                increases += 1;
                log::debug!("truth discovery objective rose from {prev} to {f} at sweep {it}");
            }
        }
        trace.push(f);

        if delta <= config.epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        log::info!(
            "truth discovery did not converge within {} sweeps",
            config.max_iterations
        );
    }

    Ok(Inference {
        truth,
        state: ReliabilityState {
            weight,
            bias,
            belief: vec![0.0; sensor_count],
        },
        iterations,
        converged,
        degenerate: false,
        objective_trace: trace,
        lagrangian,
        objective_increases: increases,
    })
}

/// Belief of vehicle `c`: `ln` of its total overlap with every other
/// trajectory, or `0` when there is no overlap.
pub fn belief(c: usize, trajectories: &[&Trajectory]) -> f64 {
    let Some(own) = trajectories.iter().find(|t| t.vehicle == c) else {
        return 0.0;
    };
    let total: usize = trajectories
        .iter()
        .filter(|t| t.vehicle != c)
        .map(|t| overlap_count(own, t))
        .sum();
    if total == 0 {
        0.0
    } else {
        (total as f64).ln()
    }
}

/// Beliefs for every trajectory in the slice, in slice order.
pub fn beliefs(trajectories: &[&Trajectory]) -> Vec<f64> {
    let n = trajectories.len();
    let mut totals = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let o = overlap_count(trajectories[i], trajectories[j]);
            totals[i] += o;
            totals[j] += o;
        }
    }
    totals
        .into_iter()
        .map(|t| if t == 0 { 0.0 } else { (t as f64).ln() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const TOL: f64 = 1e-12;

    fn reading(sensor: usize, x: usize, value: f64) -> SensorReading {
        SensorReading {
            sensor,
            cell: CellIndex::new(x, 1, 1),
            value,
        }
    }

    #[test]
    fn aggregate_hand_values() {
        let one = CellReadings::new(&[reading(0, 1, 7.0)], 1).unwrap();
        let m = aggregate_truth(&one, &[0.8], &[0.0]).unwrap();
        assert_eq!(m.get(&CellIndex::new(1, 1, 1)), Some(7.0));

        let two = CellReadings::new(&[reading(0, 1, 4.0), reading(1, 1, 6.0)], 2).unwrap();
        let m = aggregate_truth(&two, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(m.get(&CellIndex::new(1, 1, 1)), Some(5.0));

        let two = CellReadings::new(&[reading(0, 1, 5.0), reading(1, 1, 9.0)], 2).unwrap();
        let m = aggregate_truth(&two, &[3.0, 1.0], &[1.0, -1.0]).unwrap();
        assert!((m.get(&CellIndex::new(1, 1, 1)).unwrap() - 5.5).abs() < TOL);
    }

    #[test]
    fn aggregate_rejects_zero_weights() {
        let two = CellReadings::new(&[reading(0, 1, 5.0), reading(1, 1, 9.0)], 2).unwrap();
        assert!(matches!(
            aggregate_truth(&two, &[0.0, 0.0], &[0.0, 0.0]),
            Err(InferenceError::DegenerateWeights(_))
        ));
    }

    #[test]
    fn weights_from_hand_residuals() {
        let w = weights_from_residuals(&[1.0, 3.0], &[true, true]);
        assert!((w[0] - 4f64.ln()).abs() < TOL);
        assert!((w[1] - (4.0f64 / 3.0).ln()).abs() < TOL);
        assert!((w[0] - 1.3863).abs() < 1e-4 && (w[1] - 0.2877).abs() < 1e-4);
        let s: f64 = w.iter().map(|w| (-w).exp()).sum();
        assert!((s - 1.0).abs() < TOL);

        let w = weights_from_residuals(&[2.5; 5], &[true; 5]);
        for v in w {
            assert!((v - 5f64.ln()).abs() < TOL);
        }
        let w = weights_from_residuals(&[0.0; 3], &[true; 3]);
        assert!(w.iter().all(|v| (v - 3f64.ln()).abs() < TOL));
    }

    #[test]
    fn unevidenced_sensor_gets_mean_residual() {
        let w = weights_from_residuals(&[1.0, 3.0, 0.0], &[true, true, false]);
        // effective residuals {1, 3, 2}
        assert!((w[2] - 3f64.ln()).abs() < TOL);
        let s: f64 = w.iter().map(|w| (-w).exp()).sum();
        assert!((s - 1.0).abs() < TOL);
    }

    #[test]
    fn update_weights_matches_residual_shares() {
        // truth 0 at two cells; sensor 0 residuals {1, 0}, sensor 1 {1, √2}
        let rs = [
            reading(0, 1, 1.0),
            reading(1, 1, -1.0),
            reading(0, 2, 0.0),
            reading(1, 2, 2f64.sqrt()),
        ];
        let g = CellReadings::new(&rs, 2).unwrap();
        let truth: TruthField = [(CellIndex::new(1, 1, 1), 0.0), (CellIndex::new(2, 1, 1), 0.0)]
            .into_iter()
            .collect();
        let w = update_weights(&g, &truth, &[0.0, 0.0]).unwrap();
        assert!((w[0] - 4f64.ln()).abs() < TOL);
        assert!((w[1] - (4.0f64 / 3.0).ln()).abs() < TOL);
    }

    #[test]
    fn bias_hand_values() {
        let rs: Vec<_> = (1..=4).map(|x| reading(0, x, 12.0)).collect();
        let g = CellReadings::new(&rs, 1).unwrap();
        let truth: TruthField = (1..=4).map(|x| (CellIndex::new(x, 1, 1), 10.0)).collect();
        assert_eq!(raw_bias(&g, &truth, &[0.0]).unwrap(), vec![2.0]);
        assert_eq!(update_bias(&g, &truth, &[0.0]).unwrap(), vec![0.0]);

        assert_eq!(recenter(&[3.0, 1.0]), vec![1.0, -1.0]);

        let rs = [reading(0, 1, 5.0), reading(1, 1, 5.0)];
        let g = CellReadings::new(&rs, 2).unwrap();
        let truth: TruthField = [(CellIndex::new(1, 1, 1), 5.0)].into_iter().collect();
        assert_eq!(update_bias(&g, &truth, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn bias_without_readings_is_carried() {
        let rs = [reading(0, 1, 8.0), reading(1, 1, 4.0)];
        let g = CellReadings::new(&rs, 3).unwrap();
        let truth: TruthField = [(CellIndex::new(1, 1, 1), 6.0)].into_iter().collect();
        let b = update_bias(&g, &truth, &[0.0, 0.0, 3.0]).unwrap();
        // raw {2, -2, 3}, mean 1
        assert_eq!(b, vec![1.0, -3.0, 2.0]);
    }

    #[test]
    fn identical_readings_give_uniform_state() {
        let mut rs = Vec::new();
        for x in 1..=5 {
            for s in 0..3 {
                rs.push(reading(s, x, 10.0 + x as f64));
            }
        }
        let out = infer(&rs, 3, &InferenceConfig::default()).unwrap();
        assert!(out.converged);
        for (c, v) in out.truth.iter() {
            assert!((v - (10.0 + c.x as f64)).abs() < TOL);
        }
        for s in 0..3 {
            assert!((out.state.weight[s] - 3f64.ln()).abs() < TOL);
            assert!(out.state.bias[s].abs() < TOL);
        }
    }

    #[test]
    fn single_sensor_is_degenerate() {
        let rs = [reading(0, 1, 3.0), reading(0, 2, 4.0)];
        let out = infer(&rs, 1, &InferenceConfig::default()).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.state.weight, vec![0.0]);
        assert_eq!(out.truth.get(&CellIndex::new(2, 1, 1)), Some(4.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            infer(&[], 2, &InferenceConfig::default()).unwrap_err(),
            InferenceError::NoReadings
        );
        assert!(matches!(
            infer(&[reading(5, 1, 1.0)], 2, &InferenceConfig::default()),
            Err(InferenceError::UnknownSensor { .. })
        ));
        let cfg = InferenceConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert_eq!(
            infer(&[reading(0, 1, 1.0)], 1, &cfg).unwrap_err(),
            InferenceError::BadConfig
        );
    }

    #[test]
    fn two_sensor_bias_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Normal::new(0.0, 1.0).unwrap();
        let b = Normal::new(0.0, 5.0).unwrap();
        let mut rs = Vec::new();
        for i in 0..100 {
            let cell = CellIndex::new(i % 10 + 1, i / 10 + 1, 1);
            rs.push(SensorReading {
                sensor: 0,
                cell,
                value: 50.0 + a.sample(&mut rng),
            });
            rs.push(SensorReading {
                sensor: 1,
                cell,
                value: 50.0 + 10.0 + b.sample(&mut rng),
            });
        }
        let out = infer(&rs, 2, &InferenceConfig::default()).unwrap();
        // with two sensors the residuals against their weighted mean are
        // mirror images, so the weights cannot separate them
        assert!((out.state.weight[0] - out.state.weight[1]).abs() < 1e-9);
        // planted {0, 10} centred to {-5, 5}
        assert!((out.state.bias[1] - 5.0).abs() <= 1.0, "{:?}", out.state.bias);
        assert!(out.state.normalization_error() <= 1e-9);
        assert!(out.state.bias_sum() <= 1e-9);
    }

    #[test]
    fn warm_start_from_fixed_point_stops_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 2.0).unwrap();
        let mut rs = Vec::new();
        for x in 1..=20 {
            for s in 0..3 {
                rs.push(SensorReading {
                    sensor: s,
                    cell: CellIndex::new(x, 1, 1),
                    value: 30.0 + s as f64 * (s as f64 + 1.0) * noise.sample(&mut rng),
                });
            }
        }
        let tight = InferenceConfig {
            epsilon: 1e-11,
            max_iterations: 1000,
            warm_start: None,
        };
        let first = infer(&rs, 3, &tight).unwrap();
        assert!(first.converged);
        let cfg = InferenceConfig {
            warm_start: Some(first.warm_start()),
            ..Default::default()
        };
        let second = infer(&rs, 3, &cfg).unwrap();
        assert_eq!(second.iterations, 1);
        for (c, v) in second.truth.iter() {
            assert!((v - first.truth.get(&c).unwrap()).abs() < 1e-6);
        }
        for s in 0..3 {
            assert!((second.state.weight[s] - first.state.weight[s]).abs() < 1e-6);
            assert!((second.state.bias[s] - first.state.bias[s]).abs() < 1e-6);
        }
    }

    #[test]
    fn readings_csv_round_trip() {
        let rs = vec![reading(0, 1, 2.5), reading(3, 2, -1.0)];
        let mut buf = Vec::new();
        write_readings_csv(&mut buf, &rs).unwrap();
        assert_eq!(read_readings_csv(buf.as_slice()).unwrap(), rs);
        let bad = "sensor_id,t,x,y,value\n0,1,0,1,3.0\n";
        let err = read_readings_csv(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn belief_hand_values() {
        let a = Trajectory::from_path(0, 0, 1, &[(1, 1), (1, 1), (1, 1), (1, 1)]);
        let b = Trajectory::from_path(1, 0, 1, &[(1, 1), (1, 1), (1, 1), (1, 1)]);
        let c = Trajectory::from_path(2, 0, 1, &[(1, 1), (1, 1), (1, 1), (1, 1)]);
        let far = Trajectory::from_path(3, 0, 1, &[(5, 5)]);
        assert_eq!(belief(3, &[&a, &far]), 0.0);
        // vehicle 0 overlaps 4 slots with each of two others
        assert!((belief(0, &[&a, &b, &c]) - 8f64.ln()).abs() < TOL);
        let one = Trajectory::from_path(4, 0, 2, &[(1, 1)]);
        let lone = Trajectory::from_path(5, 0, 1, &[(1, 1), (2, 1)]);
        assert_eq!(belief(4, &[&one, &lone]), 0.0);
        let all = beliefs(&[&a, &b, &c, &far]);
        assert!((all[0] - 8f64.ln()).abs() < TOL);
        assert_eq!(all[3], 0.0);
    }
}
