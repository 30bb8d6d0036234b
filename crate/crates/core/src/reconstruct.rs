//! Field reconstruction from inferred values on sensed cells.
//!
//! Both reconstructors work slice by slice in time over the free cells:
//! inverse-distance weighting, and a squared-exponential kernel regression
//! (the posterior mean of a Gaussian process whose prior mean is the mean of
//! the sensed values in the slice). A slice without sensed cells is filled
//! with the mean of every sensed value.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{CellIndex, GridError, GridField, GridSpec};
use crate::metrics::{r_rmse, EvalError};
use crate::truth_discovery::TruthField;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("no sensed cells to reconstruct from")]
    NoSensedCells,
    #[error("sensed cell {0} is outside the grid or excluded")]
    OffGrid(CellIndex),
    #[error("sensed value at {0} is not finite")]
    NonFinite(CellIndex),
    #[error("kernel length scale must be positive (got {0})")]
    LengthScale(f64),
    #[error("kernel noise term must be non-negative (got {0})")]
    Noise(f64),
    #[error("kernel system stayed singular after regularisation in slice {0}")]
    Singular(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("failed to write reconstruction: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub length_scale: f64,
    /// Added to the kernel diagonal.
    pub noise: f64,
    pub idw_power: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            length_scale: 2.0,
            noise: 1e-2,
            idw_power: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Idw,
    Kernel,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::Idw, Algorithm::Kernel];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Idw => "idw",
            Algorithm::Kernel => "kernel",
        }
    }
}

/// Sensed values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionInput {
    grid: GridSpec,
    values: BTreeMap<CellIndex, f64>,
}

impl ReconstructionInput {
    pub fn new(grid: &GridSpec, values: impl IntoIterator<Item = (CellIndex, f64)>) -> Result<Self, ReconstructError> {
        let values: BTreeMap<CellIndex, f64> = values.into_iter().collect();
        if values.is_empty() {
            return Err(ReconstructError::NoSensedCells);
        }
        for (&c, &v) in &values {
            if !grid.contains(c) {
                return Err(ReconstructError::OffGrid(c));
            }
            if !v.is_finite() {
                return Err(ReconstructError::NonFinite(c));
            }
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn from_truth(grid: &GridSpec, truth: &TruthField) -> Result<Self, ReconstructError> {
        Self::new(grid, truth.iter())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn global_mean(&self) -> f64 {
        self.values.values().sum::<f64>() / self.values.len() as f64
    }

    fn slice(&self, t: usize) -> Vec<((usize, usize), f64)> {
        self.values
            .range(CellIndex::new(0, 0, t)..CellIndex::new(0, 0, t + 1))
            .map(|(c, v)| (c.position(), *v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedField {
    pub algorithm: Algorithm,
    pub field: GridField,
    /// Slices filled with the global mean for lack of sensed cells.
    pub fallback_slices: Vec<usize>,
    /// Slices whose kernel system needed extra diagonal regularisation.
    pub regularized_slices: Vec<usize>,
}

impl ReconstructedField {
    pub fn get(&self, x: usize, y: usize, t: usize) -> f64 {
        self.field.get(x, y, t)
    }
}

/// Per-slice results: values over free cells in `free` order, plus flags.
struct Slice {
    values: Vec<f64>,
    fallback: bool,
    regularized: bool,
}

fn assemble(input: &ReconstructionInput, algorithm: Algorithm, slices: Vec<Slice>) -> ReconstructedField {
    let grid = &input.grid;
    let free = grid.free_cells();
    let mut field = GridField::zeros(grid);
    let mut fallback_slices = Vec::new();
    let mut regularized_slices = Vec::new();
    for (i, s) in slices.into_iter().enumerate() {
        let t = i + 1;
        for (&(x, y), v) in free.iter().zip(s.values) {
            field.set(x, y, t, v);
        }
        if s.fallback {
            fallback_slices.push(t);
        }
        if s.regularized {
            regularized_slices.push(t);
        }
    }
    ReconstructedField {
        algorithm,
        field,
        fallback_slices,
        regularized_slices,
    }
}

fn sq_dist(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    dx * dx + dy * dy
}

/// Inverse-distance weighting with weights `1 / d^power`; exact at sensed
/// cells.
pub fn interpolate_linear(input: &ReconstructionInput, power: f64) -> ReconstructedField {
    let free = input.grid.free_cells();
    let global = input.global_mean();
    let slices = (1..=input.grid.horizon())
        .into_par_iter()
        .map(|t| {
            let sensed = input.slice(t);
            if sensed.is_empty() {
                return Slice {
                    values: vec![global; free.len()],
                    fallback: true,
                    regularized: false,
                };
            }
            let values = free
                .iter()
                .map(|&q| {
                    if let Some(&(_, v)) = sensed.iter().find(|(p, _)| *p == q) {
                        return v;
                    }
                    let (num, den) = sensed.iter().fold((0.0, 0.0), |(num, den), &(p, v)| {
                        let w = sq_dist(p, q).powf(-power / 2.0);
                        (num + w * v, den + w)
                    });
                    num / den
                })
                .collect();
            Slice {
                values,
                fallback: false,
                regularized: false,
            }
        })
        .collect();
    assemble(input, Algorithm::Idw, slices)
}

/// Squared-exponential kernel regression, mean prediction only.
pub fn interpolate_kernel(
    input: &ReconstructionInput,
    length_scale: f64,
    noise: f64,
) -> Result<ReconstructedField, ReconstructError> {
    if !(length_scale > 0.0 && length_scale.is_finite()) {
        return Err(ReconstructError::LengthScale(length_scale));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(ReconstructError::Noise(noise));
    }
    let free = input.grid.free_cells();
    let global = input.global_mean();
    let kernel = |a: (usize, usize), b: (usize, usize)| (-sq_dist(a, b) / (2.0 * length_scale * length_scale)).exp();
    let slices: Result<Vec<Slice>, ReconstructError> = (1..=input.grid.horizon())
        .into_par_iter()
        .map(|t| {
            let sensed = input.slice(t);
            if sensed.is_empty() {
                return Ok(Slice {
                    values: vec![global; free.len()],
                    fallback: true,
                    regularized: false,
                });
            }
            let n = sensed.len();
            let mean = sensed.iter().map(|s| s.1).sum::<f64>() / n as f64;
            let k = DMatrix::from_fn(n, n, |i, j| kernel(sensed[i].0, sensed[j].0));
            let y = DVector::from_iterator(n, sensed.iter().map(|s| s.1 - mean));
            let mut jitter = noise;
            let mut regularized = false;
            let alpha = loop {
                let mut a = k.clone();
                for i in 0..n {
                    a[(i, i)] += jitter;
                }
                if let Some(chol) = a.cholesky() {
                    break chol.solve(&y);
                }
                regularized = true;
                jitter = if jitter > 0.0 { jitter * 10.0 } else { 1e-10 };
                if jitter > 1.0 {
                    return Err(ReconstructError::Singular(t));
                }
            };
            let values = free
                .iter()
                .map(|&q| {
                    mean + sensed
                        .iter()
                        .zip(alpha.iter())
                        .map(|(s, a)| kernel(s.0, q) * a)
                        .sum::<f64>()
                })
                .collect();
            Ok(Slice {
                values,
                fallback: false,
                regularized,
            })
        })
        .collect();
    Ok(assemble(input, Algorithm::Kernel, slices?))
}

/// Both reconstructions with the configured parameters.
pub fn reconstruct_all(
    input: &ReconstructionInput,
    cfg: &ReconstructionConfig,
) -> Result<Vec<ReconstructedField>, ReconstructError> {
    Ok(vec![
        interpolate_linear(input, cfg.idw_power),
        interpolate_kernel(input, cfg.length_scale, cfg.noise)?,
    ])
}

/// R-RMSE of a reconstruction against the truth over every free cell.
pub fn evaluate(reconstructed: &ReconstructedField, truth: &GridField) -> Result<f64, ReconstructError> {
    let grid = reconstructed.field.grid();
    if grid != truth.grid() {
        return Err(GridError::ShapeMismatch("reconstruction and truth grids differ".into()).into());
    }
    let mask: Vec<bool> = (0..grid.cell_count())
        .map(|i| {
            let c = grid.cell_at(i);
            grid.is_free(c.x, c.y)
        })
        .collect();
    Ok(r_rmse(reconstructed.field.values(), truth.values(), &mask)?)
}

/// CSV with header `t,x,y,value,algorithm`, free cells only.
pub fn write_reconstructions_csv<W: Write>(writer: W, fields: &[ReconstructedField]) -> Result<(), ReconstructError> {
    let err = |e: csv::Error| ReconstructError::Csv(e.to_string());
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["t", "x", "y", "value", "algorithm"]).map_err(err)?;
    for f in fields {
        for (cell, v) in f.field.free_cells() {
            wtr.write_record([
                cell.t.to_string(),
                cell.x.to_string(),
                cell.y.to_string(),
                v.to_string(),
                f.algorithm.as_str().to_string(),
            ])
            .map_err(err)?;
        }
    }
    wtr.flush().map_err(|e| ReconstructError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(grid: &GridSpec, vals: &[((usize, usize, usize), f64)]) -> ReconstructionInput {
        ReconstructionInput::new(grid, vals.iter().map(|&((x, y, t), v)| (CellIndex::new(x, y, t), v))).unwrap()
    }

    #[test]
    fn idw_hand_values() {
        let g = GridSpec::open(3, 1, 1).unwrap();
        let r = interpolate_linear(&input(&g, &[((1, 1, 1), 0.0), ((3, 1, 1), 10.0)]), 2.0);
        assert!((r.get(2, 1, 1) - 5.0).abs() < 1e-12);
        assert_eq!(r.get(1, 1, 1), 0.0);
        assert_eq!(r.get(3, 1, 1), 10.0);

        let g = GridSpec::open(4, 3, 1).unwrap();
        let r = interpolate_linear(&input(&g, &[((2, 2, 1), 40.0)]), 2.0);
        assert!(r.field.values().iter().all(|&v| (v - 40.0).abs() < 1e-12));
    }

    #[test]
    fn fully_sensed_is_identity() {
        let g = GridSpec::open(3, 2, 1).unwrap();
        let vals: Vec<_> = g
            .free_cells()
            .into_iter()
            .map(|(x, y)| ((x, y, 1), (x * 10 + y) as f64))
            .collect();
        let inp = input(&g, &vals);
        let idw = interpolate_linear(&inp, 2.0);
        let ker = interpolate_kernel(&inp, 2.0, 0.0).unwrap();
        for &((x, y, t), v) in &vals {
            assert_eq!(idw.get(x, y, t), v);
            assert!((ker.get(x, y, t) - v).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_slice_uses_global_mean() {
        let g = GridSpec::open(3, 1, 2).unwrap();
        let inp = input(&g, &[((1, 1, 1), 2.0), ((2, 1, 1), 4.0)]);
        for r in reconstruct_all(&inp, &ReconstructionConfig::default()).unwrap() {
            assert_eq!(r.fallback_slices, vec![2]);
            assert_eq!(r.get(3, 1, 2), 3.0);
        }
    }

    #[test]
    fn kernel_hand_values() {
        let g = GridSpec::open(40, 1, 1).unwrap();
        let inp = input(&g, &[((1, 1, 1), 10.0), ((2, 1, 1), 20.0), ((4, 1, 1), 12.0)]);
        let exact = interpolate_kernel(&inp, 2.0, 1e-12).unwrap();
        assert!((exact.get(1, 1, 1) - 10.0).abs() < 1e-6);
        assert!((exact.get(4, 1, 1) - 12.0).abs() < 1e-6);
        let mean = 14.0;
        assert!((exact.get(40, 1, 1) - mean).abs() < 1e-3);

        let flat = input(&g, &[((3, 1, 1), 7.0), ((9, 1, 1), 7.0)]);
        let r = interpolate_kernel(&flat, 2.0, 1e-2).unwrap();
        assert!(r.field.values().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn kernel_rejects_bad_parameters() {
        let g = GridSpec::open(2, 1, 1).unwrap();
        let inp = input(&g, &[((1, 1, 1), 1.0)]);
        assert!(interpolate_kernel(&inp, 0.0, 0.1).is_err());
        assert!(interpolate_kernel(&inp, 1.0, -0.1).is_err());
    }

    #[test]
    fn input_validation() {
        let g = GridSpec::new(2, 1, 1, 2.0, [(2, 1)]).unwrap();
        assert!(matches!(
            ReconstructionInput::new(&g, std::iter::empty()),
            Err(ReconstructError::NoSensedCells)
        ));
        assert!(matches!(
            ReconstructionInput::new(&g, [(CellIndex::new(2, 1, 1), 1.0)]),
            Err(ReconstructError::OffGrid(_))
        ));
    }

    #[test]
    fn evaluation_values() {
        let g = GridSpec::open(2, 1, 1).unwrap();
        let truth = GridField::from_fn(&g, |x, _, _| x as f64);
        let exact = input(&g, &[((1, 1, 1), 1.0), ((2, 1, 1), 2.0)]);
        assert_eq!(evaluate(&interpolate_linear(&exact, 2.0), &truth).unwrap(), 0.0);
        let shifted = input(&g, &[((1, 1, 1), 4.0), ((2, 1, 1), 5.0)]);
        assert!((evaluate(&interpolate_linear(&shifted, 2.0), &truth).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let g = GridSpec::open(2, 1, 1).unwrap();
        let r = interpolate_linear(&input(&g, &[((1, 1, 1), 1.5)]), 2.0);
        let mut buf = Vec::new();
        write_reconstructions_csv(&mut buf, &[r]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,x,y,value,algorithm\n1,1,1,1.5,idw\n1,2,1,1.5,idw\n"
        );
    }
}
