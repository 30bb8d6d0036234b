//! Belief-aware greedy dispatching, acceptance and baseline dispatchers.
//!
//! A plan is built in greedy steps over one actuation window. In each step
//! the density `P` of the currently chosen trajectories is computed, every
//! vehicle that has not been dispatched yet is visited in order of
//! decreasing belief, and its best candidate `k*` by V value is looked up:
//!
//! `V(r, P) = −w_c · Σ_{cells of r} P / Σ P`
//!
//! where `P` is the density of the rest of the fleet. A vehicle whose best
//! candidate is its original trajectory is cancelled for the step. Otherwise
//! its incentive is quoted and tentatively reserved; a quote that does not fit
//! the remaining budget skips the vehicle. Among the reserved vehicles the one
//! with the largest V is dispatched, beliefs and `P` are recomputed and the
//! next step starts. Planning stops when no vehicle can be dispatched.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{density, DensityField, GridError, GridSpec, Trajectory};
use crate::incentive::{
    quote, BudgetLedger, CommitOutcome, DemandField, IncentiveError, IncentiveParams, IncentiveQuote, Money,
};
use crate::metrics::{asq, AsqBreakdown, AsqConfig, EvalError};
use crate::rng::{label, stream};
use crate::truth_discovery::beliefs;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("cannot plan for an empty fleet")]
    EmptyFleet,
    #[error("vehicle {0} has no original trajectory")]
    MissingOriginal(usize),
    #[error("candidate {k} of vehicle {vehicle} is labelled for vehicle {labelled} candidate {labelled_k}")]
    Mislabelled {
        vehicle: usize,
        k: usize,
        labelled: usize,
        labelled_k: usize,
    },
    #[error("vehicle {0} appears more than once")]
    DuplicateVehicle(usize),
    #[error("{weights} weights for {vehicles} vehicles")]
    WeightCount { weights: usize, vehicles: usize },
    #[error("acceptance rate must lie in [0, 1] (got {0})")]
    AcceptanceRate(f64),
    #[error("unknown dispatcher '{0}' (expected quids, nore, noin or na)")]
    UnknownKind(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Incentive(#[from] IncentiveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Original trajectory (index 0) and alternates of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    vehicle: usize,
    candidates: Vec<Trajectory>,
}

impl CandidateSet {
    /// Candidate `k` must be labelled with this vehicle and index `k`.
    pub fn new(vehicle: usize, candidates: Vec<Trajectory>) -> Result<Self, DispatchError> {
        if candidates.is_empty() {
            return Err(DispatchError::MissingOriginal(vehicle));
        }
        for (k, c) in candidates.iter().enumerate() {
            if c.vehicle != vehicle || c.candidate != k {
                return Err(DispatchError::Mislabelled {
                    vehicle,
                    k,
                    labelled: c.vehicle,
                    labelled_k: c.candidate,
                });
            }
        }
        Ok(Self { vehicle, candidates })
    }

    /// Set holding only the original trajectory.
    pub fn original_only(original: Trajectory) -> Self {
        let vehicle = original.vehicle;
        Self {
            vehicle,
            candidates: vec![original.relabel(vehicle, 0)],
        }
    }

    pub fn vehicle(&self) -> usize {
        self.vehicle
    }

    pub fn original(&self) -> &Trajectory {
        &self.candidates[0]
    }

    pub fn get(&self, k: usize) -> Option<&Trajectory> {
        self.candidates.get(k)
    }

    pub fn candidates(&self) -> &[Trajectory] {
        &self.candidates
    }

    /// Number of alternates, excluding the original.
    pub fn alternates(&self) -> usize {
        self.candidates.len() - 1
    }

    pub fn into_candidates(self) -> Vec<Trajectory> {
        self.candidates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatcherKind {
    Quids,
    #[serde(rename = "nore")]
    NoRe,
    #[serde(rename = "noin")]
    NoIn,
    #[serde(rename = "na")]
    NoActuation,
}

impl DispatcherKind {
    pub const ALL: [DispatcherKind; 4] = [
        DispatcherKind::Quids,
        DispatcherKind::NoRe,
        DispatcherKind::NoIn,
        DispatcherKind::NoActuation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DispatcherKind::Quids => "quids",
            DispatcherKind::NoRe => "nore",
            DispatcherKind::NoIn => "noin",
            DispatcherKind::NoActuation => "na",
        }
    }
}

impl fmt::Display for DispatcherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DispatcherKind {
    type Err = DispatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "quids" => Ok(DispatcherKind::Quids),
            "nore" | "quids-nore" => Ok(DispatcherKind::NoRe),
            "noin" | "quids-noin" => Ok(DispatcherKind::NoIn),
            "na" | "noactuation" | "no-actuation" => Ok(DispatcherKind::NoActuation),
            _ => Err(DispatchError::UnknownKind(s.to_string())),
        }
    }
}

/// How incentives are priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncentivePolicy {
    /// Demand-aware quote, clamped to `[r_min, r_max]`.
    Quoted,
    /// The same amount for every dispatch.
    Constant(Money),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleDecision {
    pub vehicle: usize,
    pub dispatched: bool,
    pub candidate: usize,
    pub incentive: Money,
    /// Ledger entry holding the incentive, used for refunds.
    #[serde(skip)]
    pub ledger_entry: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispatchRecord {
    pub c: usize,
    pub k: usize,
    pub a_c: Money,
    pub v_before: f64,
    pub v_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanStep {
    pub step: usize,
    pub dispatched: Vec<DispatchRecord>,
    pub cancelled: Vec<usize>,
    pub budget_remaining: Money,
    pub asq: f64,
}

/// Per-vehicle decisions, the greedy step log and the resulting ASQ under
/// the planning weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchPlan {
    pub kind: DispatcherKind,
    pub decisions: Vec<VehicleDecision>,
    pub steps: Vec<PlanStep>,
    pub asq: AsqBreakdown,
}

impl DispatchPlan {
    pub fn spend(&self) -> Money {
        Money::from_cents(
            self.decisions
                .iter()
                .filter(|d| d.dispatched)
                .map(|d| d.incentive.cents())
                .sum(),
        )
    }

    pub fn dispatched_count(&self) -> usize {
        self.decisions.iter().filter(|d| d.dispatched).count()
    }

    /// Chosen trajectory per vehicle, parallel to `sets`.
    pub fn chosen<'a>(&self, sets: &'a [CandidateSet]) -> Vec<&'a Trajectory> {
        sets.iter()
            .zip(&self.decisions)
            .map(|(s, d)| s.get(d.candidate).unwrap_or_else(|| s.original()))
            .collect()
    }
}

/// V value of a candidate against a density field; zero when the field is
/// empty.
pub fn v_value(candidate: &Trajectory, weight: f64, p: &DensityField) -> f64 {
    let total = p.total();
    if total <= 0.0 {
        return 0.0;
    }
    let grid = p.grid();
    let overlap: f64 = candidate
        .cells()
        .iter()
        .filter(|c| grid.contains(**c))
        .map(|c| p.get(c.x, c.y, c.t))
        .sum();
    -(weight * overlap) / total
}

/// Relative slack under which two V values count as tied, so that the
/// id-based tie-breaks apply to values that differ only by rounding.
const V_TIE_TOLERANCE: f64 = 1e-12;

/// Whether `a` is larger than `b` by more than rounding noise.
fn exceeds(a: f64, b: f64) -> bool {
    a - b > V_TIE_TOLERANCE * a.abs().max(b.abs()).max(1e-300)
}

/// Inputs shared by every dispatcher.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    /// Grid of the actuation window.
    pub grid: &'a GridSpec,
    pub candidates: &'a [CandidateSet],
    /// Reliability weight per candidate set, in the same order.
    pub weights: &'a [f64],
    pub demand: &'a DemandField,
    pub params: &'a IncentiveParams,
    pub asq: &'a AsqConfig,
}

impl PlanContext<'_> {
    fn check(&self) -> Result<(), DispatchError> {
        if self.candidates.is_empty() {
            return Err(DispatchError::EmptyFleet);
        }
        if self.weights.len() != self.candidates.len() {
            return Err(DispatchError::WeightCount {
                weights: self.weights.len(),
                vehicles: self.candidates.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in self.candidates {
            if !seen.insert(s.vehicle) {
                return Err(DispatchError::DuplicateVehicle(s.vehicle));
            }
        }
        for &w in self.weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(GridError::BadWeight { vehicle: 0, weight: w }.into());
            }
        }
        self.asq.validate()?;
        self.params.validate()?;
        Ok(())
    }

    fn evaluate(&self, chosen: &[&Trajectory], weights: &[f64]) -> Result<AsqBreakdown, DispatchError> {
        let entries: Vec<(&Trajectory, f64)> = chosen.iter().copied().zip(weights.iter().copied()).collect();
        Ok(asq(self.grid, &entries, self.asq)?)
    }
}

/// Density of the fleet with vehicle `skip` contributing nothing. The fleet
/// size stays `C` so fields for different vehicles share a scale.
fn density_without(
    grid: &GridSpec,
    chosen: &[&Trajectory],
    weights: &[f64],
    skip: usize,
) -> Result<DensityField, GridError> {
    let entries: Vec<(&Trajectory, f64)> = chosen
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (t, &w))| (*t, if i == skip { 0.0 } else { w }))
        .collect();
    density(grid, &entries)
}

/// Greedy belief-aware plan. Incentives are committed to `ledger`, whose
/// remaining budget bounds the plan.
pub fn plan(
    ctx: &PlanContext<'_>,
    policy: IncentivePolicy,
    ledger: &mut BudgetLedger,
) -> Result<DispatchPlan, DispatchError> {
    ctx.check()?;
    let n = ctx.candidates.len();
    let mut decisions: Vec<VehicleDecision> = ctx
        .candidates
        .iter()
        .map(|s| VehicleDecision {
            vehicle: s.vehicle,
            dispatched: false,
            candidate: 0,
            incentive: Money::ZERO,
            ledger_entry: None,
        })
        .collect();
    let mut steps = Vec::new();

    loop {
        let chosen: Vec<&Trajectory> = ctx
            .candidates
            .iter()
            .zip(&decisions)
            .map(|(s, d)| &s.candidates[d.candidate])
            .collect();
        let belief = beliefs(&chosen);

        let mut order: Vec<usize> = (0..n).filter(|&i| !decisions[i].dispatched).collect();
        order.sort_by(|&a, &b| {
            belief[b]
                .total_cmp(&belief[a])
                .then(ctx.candidates[a].vehicle.cmp(&ctx.candidates[b].vehicle))
        });

        let mut reserved = Money::ZERO;
        let mut shortlist: Vec<(usize, usize, f64, f64, IncentiveQuote)> = Vec::new();
        let mut cancelled = Vec::new();
        for &i in &order {
            let set = &ctx.candidates[i];
            let p = density_without(ctx.grid, &chosen, ctx.weights, i)?;
            let w = ctx.weights[i];
            let v0 = v_value(set.original(), w, &p);
            let (k_best, v_best) = set
                .candidates
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, r)| (k, v_value(r, w, &p)))
                .fold((0, v0), |best, cur| if exceeds(cur.1, best.1) { cur } else { best });
            if k_best == 0 {
                cancelled.push(set.vehicle);
                continue;
            }
            let mut q = quote(set.original(), &set.candidates[k_best], ctx.demand, ctx.params)?;
            if let IncentivePolicy::Constant(amount) = policy {
                q.amount = amount;
            }
            let fits = ledger
                .committed()
                .checked_add(reserved)
                .and_then(|m| m.checked_add(q.amount))
                .is_some_and(|total| total <= ledger.budget());
            if !fits {
                continue;
            }
            reserved = Money::from_cents(reserved.cents() + q.amount.cents());
            shortlist.push((i, k_best, v0, v_best, q));
        }

        let best = shortlist.iter().reduce(|best, cur| {
            let tied = !exceeds(cur.3, best.3) && !exceeds(best.3, cur.3);
            let lower_id = ctx.candidates[cur.0].vehicle < ctx.candidates[best.0].vehicle;
            if exceeds(cur.3, best.3) || (tied && lower_id) {
                cur
            } else {
                best
            }
        });
        let Some(&(i, k, v0, v, q)) = best else {
            break;
        };
        let entry = match ledger.commit(&q) {
            CommitOutcome::Accepted(e) => e,
            CommitOutcome::Rejected => break,
        };
        decisions[i] = VehicleDecision {
            vehicle: ctx.candidates[i].vehicle,
            dispatched: true,
            candidate: k,
            incentive: q.amount,
            ledger_entry: Some(entry),
        };

        let after: Vec<&Trajectory> = ctx
            .candidates
            .iter()
            .zip(&decisions)
            .map(|(s, d)| &s.candidates[d.candidate])
            .collect();
        steps.push(PlanStep {
            step: steps.len() + 1,
            dispatched: vec![DispatchRecord {
                c: ctx.candidates[i].vehicle,
                k,
                a_c: q.amount,
                v_before: v0,
                v_after: v,
            }],
            cancelled,
            budget_remaining: ledger.remaining(),
            asq: ctx.evaluate(&after, ctx.weights)?.asq,
        });
    }

    let chosen: Vec<&Trajectory> = ctx
        .candidates
        .iter()
        .zip(&decisions)
        .map(|(s, d)| &s.candidates[d.candidate])
        .collect();
    let asq = ctx.evaluate(&chosen, ctx.weights)?;
    Ok(DispatchPlan {
        kind: DispatcherKind::Quids,
        decisions,
        steps,
        asq,
    })
}

/// Every vehicle keeps its original trajectory.
pub fn no_actuation(ctx: &PlanContext<'_>) -> Result<DispatchPlan, DispatchError> {
    ctx.check()?;
    let decisions = ctx
        .candidates
        .iter()
        .map(|s| VehicleDecision {
            vehicle: s.vehicle,
            dispatched: false,
            candidate: 0,
            incentive: Money::ZERO,
            ledger_entry: None,
        })
        .collect();
    let originals: Vec<&Trajectory> = ctx.candidates.iter().map(|s| s.original()).collect();
    Ok(DispatchPlan {
        kind: DispatcherKind::NoActuation,
        decisions,
        steps: Vec::new(),
        asq: ctx.evaluate(&originals, ctx.weights)?,
    })
}

/// Runs the dispatcher selected by `kind`. Reliability-blind planning uses
/// unit weights; incentive-blind planning pays `constant_incentive` for
/// every dispatch.
pub fn baseline_plan(
    kind: DispatcherKind,
    ctx: &PlanContext<'_>,
    constant_incentive: Money,
    ledger: &mut BudgetLedger,
) -> Result<DispatchPlan, DispatchError> {
    let mut out = match kind {
        DispatcherKind::Quids => plan(ctx, IncentivePolicy::Quoted, ledger)?,
        DispatcherKind::NoRe => {
            let ones = vec![1.0; ctx.candidates.len()];
            let uniform = PlanContext { weights: &ones, ..*ctx };
            plan(&uniform, IncentivePolicy::Quoted, ledger)?
        }
        DispatcherKind::NoIn => plan(ctx, IncentivePolicy::Constant(constant_incentive), ledger)?,
        DispatcherKind::NoActuation => no_actuation(ctx)?,
    };
    out.kind = kind;
    Ok(out)
}

/// Per-vehicle acceptance of dispatch requests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceModel {
    pub rate: f64,
    pub seed: u64,
}

impl AcceptanceModel {
    pub fn new(rate: f64, seed: u64) -> Result<Self, DispatchError> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(DispatchError::AcceptanceRate(rate));
        }
        Ok(Self { rate, seed })
    }

    /// Whether `vehicle` accepts the request issued in `period`. Each
    /// (period, vehicle) pair has its own stream.
    pub fn accepts(&self, period: usize, vehicle: usize) -> bool {
        let u: f64 = stream(self.seed, &[label::ACCEPTANCE, period as u64, vehicle as u64]).random();
        u < self.rate
    }
}

/// Reverts every declined dispatch to the original trajectory and refunds
/// its incentive. Returns the vehicles that declined.
pub fn apply_acceptance(
    plan: &mut DispatchPlan,
    model: &AcceptanceModel,
    period: usize,
    ledger: &mut BudgetLedger,
) -> Vec<usize> {
    let mut declined = Vec::new();
    for d in plan.decisions.iter_mut().filter(|d| d.dispatched) {
        if model.accepts(period, d.vehicle) {
            continue;
        }
        if let Some(e) = d.ledger_entry {
            ledger.refund(e);
        }
        declined.push(d.vehicle);
        *d = VehicleDecision {
            vehicle: d.vehicle,
            dispatched: false,
            candidate: 0,
            incentive: Money::ZERO,
            ledger_entry: None,
        };
    }
    declined
}
