//! Aggregated sensing quality (ASQ) and the evaluation metrics used to score
//! reconstructions: R-RMSE, S-MAE, error reduction and Spearman correlation.
//!
//! Logarithms are natural throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{density, DensityField, GridError, GridSpec, Trajectory};

/// Slack applied to the coverage threshold in non-strict mode.
pub const COVERAGE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no evaluable cells")]
    EmptyMask,
    #[error("field shapes differ ({0} vs {1} values)")]
    ShapeMismatch(usize, usize),
    #[error("baseline error is zero; reduction is undefined")]
    ZeroBaseline,
    #[error("balance factor must lie in [0, 1] (got {0})")]
    BadBeta(f64),
    #[error("need at least {needed} runs, got {got}")]
    InsufficientRuns { needed: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageMode {
    /// `P > 1/(CT)`, literally.
    Strict,
    /// `P ≥ 1/(CT) − 1e−12`; counts a perfectly even fleet as covered.
    #[default]
    NonStrict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMode {
    /// Entropy of the raw, unnormalised density.
    #[default]
    Raw,
    /// Density divided by its sum before taking the entropy.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsqConfig {
    pub beta: f64,
    pub coverage: CoverageMode,
    pub entropy: EntropyMode,
}

impl Default for AsqConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            coverage: CoverageMode::NonStrict,
            entropy: EntropyMode::Raw,
        }
    }
}

impl AsqConfig {
    pub fn with_beta(beta: f64) -> Result<Self, EvalError> {
        let cfg = Self {
            beta,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if (0.0..=1.0).contains(&self.beta) {
            Ok(())
        } else {
            Err(EvalError::BadBeta(self.beta))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsqBreakdown {
    pub entropy: f64,
    pub coverage_q: usize,
    pub asq: f64,
}

impl AsqBreakdown {
    /// Combines entropy and coverage as `(1−β)·E + β·ln(max(Q,1))`.
    pub fn combine(entropy: f64, coverage_q: usize, beta: f64) -> Self {
        let asq = blend(beta, entropy, (coverage_q.max(1) as f64).ln());
        Self {
            entropy,
            coverage_q,
            asq,
        }
    }
}

/// `(1−β)·E + β·ln Q` for an already-logged coverage term.
pub fn blend(beta: f64, entropy: f64, log_coverage: f64) -> f64 {
    (1.0 - beta) * entropy + beta * log_coverage
}

/// `−Σ P·ln P` with `0·ln 0 = 0`.
pub fn spatial_entropy(p: &DensityField) -> f64 {
    entropy_of(p.values())
}

fn entropy_of(values: &[f64]) -> f64 {
    -values.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Entropy after dividing the density by its total; zero for an empty field.
pub fn normalized_entropy(p: &DensityField) -> f64 {
    let total = p.total();
    if total <= 0.0 {
        return 0.0;
    }
    let scaled: Vec<f64> = p.values().iter().map(|v| v / total).collect();
    entropy_of(&scaled)
}

/// Number of cells whose density reaches the average share `1/(CT)`.
pub fn coverage_count(p: &DensityField, mode: CoverageMode) -> usize {
    let threshold = 1.0 / (p.fleet_size() * p.horizon()) as f64;
    p.values()
        .iter()
        .filter(|&&v| match mode {
            CoverageMode::Strict => v > threshold,
            CoverageMode::NonStrict => v >= threshold - COVERAGE_SLACK,
        })
        .count()
}

pub fn asq_of_density(p: &DensityField, config: &AsqConfig) -> AsqBreakdown {
    let entropy = match config.entropy {
        EntropyMode::Raw => spatial_entropy(p),
        EntropyMode::Normalized => normalized_entropy(p),
    };
    AsqBreakdown::combine(entropy, coverage_count(p, config.coverage), config.beta)
}

/// ASQ of a weighted fleet on `grid`.
pub fn asq(grid: &GridSpec, entries: &[(&Trajectory, f64)], config: &AsqConfig) -> Result<AsqBreakdown, EvalError> {
    config.validate()?;
    let p = density(grid, entries)?;
    Ok(asq_of_density(&p, config))
}

/// Root mean squared difference over cells where `mask` is set.
pub fn r_rmse(reconstructed: &[f64], truth: &[f64], mask: &[bool]) -> Result<f64, EvalError> {
    if reconstructed.len() != truth.len() {
        return Err(EvalError::ShapeMismatch(reconstructed.len(), truth.len()));
    }
    if mask.len() != truth.len() {
        return Err(EvalError::ShapeMismatch(mask.len(), truth.len()));
    }
    let (sum, n) = reconstructed
        .iter()
        .zip(truth)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((r, t), _)| (s + (r - t).powi(2), n + 1));
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok((sum / n as f64).sqrt())
}

/// Mean absolute error over `(estimate, truth)` pairs of sensed cells.
pub fn s_mae(pairs: &[(f64, f64)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    Ok(pairs.iter().map(|(m, g)| (m - g).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Percentage reduction of a method's R-RMSE relative to no actuation.
pub fn error_reduction(rmse_method: f64, rmse_na: f64) -> Result<f64, EvalError> {
    if rmse_na == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(100.0 * (rmse_na - rmse_method) / rmse_na)
}

/// Best reduction across reconstruction algorithms, given `(method, na)` pairs.
pub fn max_error_reduction(pairs: &[(f64, f64)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    pairs
        .iter()
        .map(|&(m, na)| error_reduction(m, na))
        .try_fold(f64::NEG_INFINITY, |best, r| r.map(|r| best.max(r)))
}

/// Fractional ranks (1-based), ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation. `None` when either column is constant or the
/// inputs are shorter than two.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&ranks(a), &ranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
