//! Demand field, expected ride requests, incentive quotes and the budget
//! ledger.
//!
//! Money is held as integer cents so budget checks are exact. An incentive is
//! `a_c = clamp(r_max − r_u·(Q_c^r − Q_c^0), r_min, r_max)` where `Q_c^0` and
//! `Q_c^r` are the expected request counts along the original and the
//! dispatched trajectory: a route toward busier cells needs less
//! compensation.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::gridworld::{CellIndex, GridError, GridField, GridSpec, Trajectory};

#[derive(Debug, Error)]
pub enum IncentiveError {
    #[error("incentive bounds must satisfy 0 < r_min <= r_max (got {r_min} and {r_max})")]
    Bounds { r_min: Money, r_max: Money },
    #[error("budget must be non-negative (got {0})")]
    NegativeBudget(Money),
    #[error("unit rate must be finite and non-negative (got {0})")]
    UnitRate(f64),
    #[error("horizon must be at least one slot")]
    Horizon,
    #[error("request and idle fields cover different grids")]
    GridMismatch,
    #[error("trajectory cell {0} lies outside the demand grid")]
    OffGrid(CellIndex),
    #[error("amount {0} is not a finite currency value")]
    NotFinite(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("failed to write audit trail: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to encode audit record: {0}")]
    Json(#[from] serde_json::Error),
}

/// A currency amount with two fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    /// Rounds to the nearest cent.
    pub fn from_units(value: f64) -> Result<Self, IncentiveError> {
        if !value.is_finite() || value.abs() > 1e15 {
            return Err(IncentiveError::NotFinite(value));
        }
        Ok(Money((value * 100.0).round() as i64))
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn as_units(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn checked_add(self, other: Money) -> Option<Money> {
        self.0.checked_add(other.0).map(Money)
    }

    pub fn saturating_sub(self, other: Money) -> Money {
        Money(self.0.saturating_sub(other.0))
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_units())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Money::from_units(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncentiveParams {
    pub r_min: Money,
    pub r_max: Money,
    /// Currency per slot of extra expected demand.
    pub r_u: f64,
    pub budget: Money,
}

impl IncentiveParams {
    /// `r_u = r_max / horizon`.
    pub fn new(r_min: Money, r_max: Money, horizon: usize, budget: Money) -> Result<Self, IncentiveError> {
        if horizon == 0 {
            return Err(IncentiveError::Horizon);
        }
        Self::with_unit_rate(r_min, r_max, r_max.as_units() / horizon as f64, budget)
    }

    pub fn with_unit_rate(r_min: Money, r_max: Money, r_u: f64, budget: Money) -> Result<Self, IncentiveError> {
        let p = Self {
            r_min,
            r_max,
            r_u,
            budget,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), IncentiveError> {
        if self.r_min <= Money::ZERO || self.r_min > self.r_max {
            return Err(IncentiveError::Bounds {
                r_min: self.r_min,
                r_max: self.r_max,
            });
        }
        if self.budget < Money::ZERO {
            return Err(IncentiveError::NegativeBudget(self.budget));
        }
        if !self.r_u.is_finite() || self.r_u < 0.0 {
            return Err(IncentiveError::UnitRate(self.r_u));
        }
        Ok(())
    }
}

/// Probability of at least one ride request per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandField {
    field: GridField,
}

impl DemandField {
    /// Values are clamped into `[0, 1]` and zeroed on excluded cells.
    pub fn from_field(mut field: GridField) -> Self {
        let grid = field.grid().clone();
        for t in 1..=grid.horizon() {
            for y in 1..=grid.height() {
                for x in 1..=grid.width() {
                    let v = if grid.is_excluded(x, y) {
                        0.0
                    } else {
                        field.get(x, y, t).clamp(0.0, 1.0)
                    };
                    field.set(x, y, t, if v.is_nan() { 0.0 } else { v });
                }
            }
        }
        Self { field }
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            field: GridField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.field.grid()
    }

    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> f64 {
        self.field.get(x, y, t)
    }

    pub fn at(&self, cell: CellIndex) -> Option<f64> {
        self.grid().contains(cell).then(|| self.field.at(cell))
    }

    /// CSV with header `t,x,y,q`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GridError> {
        self.field.write_csv(writer, "q")
    }
}

/// `min(1, requests / idle)` per cell; an idle count of zero gives 1 when
/// there is any request and 0 otherwise.
pub fn demand_probability(requests: &GridField, idle: &GridField) -> Result<DemandField, IncentiveError> {
    let grid = requests.grid();
    if grid != idle.grid() {
        return Err(IncentiveError::GridMismatch);
    }
    let field = GridField::from_fn(grid, |x, y, t| {
        ratio_probability(requests.get(x, y, t), idle.get(x, y, t))
    });
    Ok(DemandField::from_field(field))
}

fn ratio_probability(requests: f64, idle: f64) -> f64 {
    if requests <= 0.0 {
        0.0
    } else if idle <= 0.0 {
        1.0
    } else {
        (requests / idle).min(1.0)
    }
}

/// Sum of `Q` over the cells a trajectory occupies.
pub fn expected_requests(traj: &Trajectory, demand: &DemandField) -> Result<f64, IncentiveError> {
    traj.cells()
        .iter()
        .map(|&c| demand.at(c).ok_or(IncentiveError::OffGrid(c)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncentiveQuote {
    pub vehicle: usize,
    pub candidate: usize,
    pub amount: Money,
    pub q_original: f64,
    pub q_candidate: f64,
}

/// Clamped incentive for a change `Q_c^r − Q_c^0` in expected requests.
pub fn incentive_amount(demand_gain: f64, params: &IncentiveParams) -> Money {
    let raw = params.r_max.as_units() - params.r_u * demand_gain;
    let cents = if raw.is_nan() {
        params.r_max.cents()
    } else {
        (raw * 100.0).round().clamp(i64::MIN as f64, i64::MAX as f64) as i64
    };
    Money(cents.clamp(params.r_min.cents(), params.r_max.cents()))
}

/// Quote for moving `vehicle` from its original trajectory to `candidate`.
pub fn quote(
    original: &Trajectory,
    candidate: &Trajectory,
    demand: &DemandField,
    params: &IncentiveParams,
) -> Result<IncentiveQuote, IncentiveError> {
    let q_original = expected_requests(original, demand)?;
    let q_candidate = expected_requests(candidate, demand)?;
    Ok(IncentiveQuote {
        vehicle: candidate.vehicle,
        candidate: candidate.candidate,
        amount: incentive_amount(q_candidate - q_original, params),
        q_original,
        q_candidate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub vehicle: usize,
    pub candidate: usize,
    pub amount: Money,
    pub refunded: bool,
}

/// One line of the ledger audit trail. Refunds carry a negative amount.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AuditRecord {
    pub vehicle: usize,
    pub k: usize,
    pub a_c: Money,
    pub committed_after: Money,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    /// Index of the new entry, usable for a later refund.
    Accepted(usize),
    Rejected,
}

/// Running total of committed incentives against a fixed budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BudgetLedger {
    budget: Money,
    committed: Money,
    entries: Vec<LedgerEntry>,
    audit: Vec<AuditRecord>,
}

impl BudgetLedger {
    pub fn new(budget: Money) -> Self {
        Self {
            budget,
            committed: Money::ZERO,
            entries: Vec::new(),
            audit: Vec::new(),
        }
    }

    pub fn budget(&self) -> Money {
        self.budget
    }

    pub fn committed(&self) -> Money {
        self.committed
    }

    pub fn remaining(&self) -> Money {
        self.budget.saturating_sub(self.committed)
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn can_afford(&self, amount: Money) -> bool {
        self.committed
            .checked_add(amount)
            .is_some_and(|total| total <= self.budget)
    }

    /// Adds the quote when the budget allows it; otherwise leaves the ledger
    /// untouched.
    pub fn commit(&mut self, quote: &IncentiveQuote) -> CommitOutcome {
        if !self.can_afford(quote.amount) {
            return CommitOutcome::Rejected;
        }
        self.committed = Money(self.committed.0 + quote.amount.0);
        self.entries.push(LedgerEntry {
            vehicle: quote.vehicle,
            candidate: quote.candidate,
            amount: quote.amount,
            refunded: false,
        });
        self.audit.push(AuditRecord {
            vehicle: quote.vehicle,
            k: quote.candidate,
            a_c: quote.amount,
            committed_after: self.committed,
        });
        CommitOutcome::Accepted(self.entries.len() - 1)
    }

    /// Returns an accepted entry's amount to the budget. Refunding twice or
    /// an unknown index is a no-op returning `None`.
    pub fn refund(&mut self, index: usize) -> Option<Money> {
        let entry = self.entries.get_mut(index)?;
        if entry.refunded {
            return None;
        }
        entry.refunded = true;
        self.committed = Money(self.committed.0 - entry.amount.0);
        self.audit.push(AuditRecord {
            vehicle: entry.vehicle,
            k: entry.candidate,
            a_c: Money(-entry.amount.0),
            committed_after: self.committed,
        });
        Some(entry.amount)
    }

    /// Audit trail as JSON lines.
    pub fn write_audit<W: Write>(&self, mut writer: W) -> Result<(), IncentiveError> {
        for rec in &self.audit {
            serde_json::to_writer(&mut writer, rec)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units(v: f64) -> Money {
        Money::from_units(v).unwrap()
    }

    fn params() -> IncentiveParams {
        IncentiveParams::with_unit_rate(units(2.0), units(20.0), 2.0, units(400.0)).unwrap()
    }

    #[test]
    fn demand_hand_values() {
        assert_eq!(ratio_probability(3.0, 6.0), 0.5);
        assert_eq!(ratio_probability(9.0, 2.0), 1.0);
        assert_eq!(ratio_probability(0.0, 0.0), 0.0);
        assert_eq!(ratio_probability(4.0, 0.0), 1.0);

        let g = GridSpec::open(2, 1, 1).unwrap();
        let req = GridField::from_fn(&g, |x, _, _| if x == 1 { 3.0 } else { 9.0 });
        let idle = GridField::from_fn(&g, |x, _, _| if x == 1 { 6.0 } else { 2.0 });
        let q = demand_probability(&req, &idle).unwrap();
        assert_eq!(q.get(1, 1, 1), 0.5);
        assert_eq!(q.get(2, 1, 1), 1.0);
    }

    #[test]
    fn demand_rejects_mismatched_grids() {
        let a = GridField::zeros(&GridSpec::open(2, 1, 1).unwrap());
        let b = GridField::zeros(&GridSpec::open(3, 1, 1).unwrap());
        assert!(matches!(demand_probability(&a, &b), Err(IncentiveError::GridMismatch)));
    }

    #[test]
    fn expected_request_hand_values() {
        let g = GridSpec::open(3, 1, 5).unwrap();
        let traj = Trajectory::from_path(0, 0, 1, &[(1, 1); 5]);
        assert_eq!(expected_requests(&traj, &DemandField::zeros(&g)).unwrap(), 0.0);
        let ones = DemandField::from_field(GridField::filled(&g, 1.0));
        assert_eq!(expected_requests(&traj, &ones).unwrap(), 5.0);

        let q = DemandField::from_field(GridField::from_fn(&g, |x, _, _| [0.2, 0.5, 0.3][x - 1]));
        let walk = Trajectory::from_path(0, 1, 1, &[(1, 1), (2, 1), (3, 1)]);
        assert!((expected_requests(&walk, &q).unwrap() - 1.0).abs() < 1e-12);

        let off = Trajectory::from_path(0, 1, 4, &[(1, 1), (1, 1), (1, 1)]);
        assert!(matches!(expected_requests(&off, &q), Err(IncentiveError::OffGrid(_))));
    }

    #[test]
    fn quote_hand_values() {
        let p = params();
        assert_eq!(incentive_amount(0.0, &p), units(20.0));
        assert_eq!(incentive_amount(3.0, &p), units(14.0));
        assert_eq!(incentive_amount(100.0, &p), units(2.0));
        assert_eq!(incentive_amount(-5.0, &p), units(20.0));
    }

    #[test]
    fn quote_uses_both_trajectories() {
        let g = GridSpec::open(3, 1, 2).unwrap();
        let q = DemandField::from_field(GridField::from_fn(&g, |x, _, _| if x == 3 { 1.0 } else { 0.0 }));
        let orig = Trajectory::from_path(4, 0, 1, &[(1, 1), (1, 1)]);
        let cand = Trajectory::from_path(4, 2, 1, &[(2, 1), (3, 1)]);
        let qt = quote(&orig, &cand, &q, &params()).unwrap();
        assert_eq!((qt.vehicle, qt.candidate), (4, 2));
        assert_eq!(qt.q_original, 0.0);
        assert_eq!(qt.q_candidate, 1.0);
        assert_eq!(qt.amount, units(18.0));
    }

    #[test]
    fn unit_rate_defaults_to_r_max_over_horizon() {
        let p = IncentiveParams::new(units(2.0), units(20.0), 10, units(400.0)).unwrap();
        assert_eq!(p.r_u, 2.0);
        assert!(IncentiveParams::new(units(0.0), units(20.0), 10, units(1.0)).is_err());
        assert!(IncentiveParams::new(units(5.0), units(2.0), 10, units(1.0)).is_err());
        assert!(IncentiveParams::new(units(1.0), units(2.0), 0, units(1.0)).is_err());
    }

    #[test]
    fn ledger_hand_values() {
        let mk = |a: f64| IncentiveQuote {
            vehicle: 1,
            candidate: 1,
            amount: units(a),
            q_original: 0.0,
            q_candidate: 0.0,
        };
        let mut l = BudgetLedger::new(units(400.0));
        assert!(matches!(l.commit(&mk(390.0)), CommitOutcome::Accepted(0)));
        let before = l.clone();
        assert_eq!(l.commit(&mk(14.0)), CommitOutcome::Rejected);
        assert_eq!(l, before);

        let mut l = BudgetLedger::new(units(400.0));
        l.commit(&mk(380.0));
        assert!(matches!(l.commit(&mk(20.0)), CommitOutcome::Accepted(1)));
        assert_eq!(l.committed(), units(400.0));
        assert_eq!(l.remaining(), Money::ZERO);

        assert_eq!(l.refund(1), Some(units(20.0)));
        assert_eq!(l.refund(1), None);
        assert_eq!(l.committed(), units(380.0));
        assert_eq!(l.audit().len(), 3);
        assert_eq!(l.audit()[2].a_c, units(-20.0));
    }

    #[test]
    fn audit_is_json_lines() {
        let mut l = BudgetLedger::new(units(50.0));
        l.commit(&IncentiveQuote {
            vehicle: 3,
            candidate: 2,
            amount: units(14.0),
            q_original: 0.0,
            q_candidate: 3.0,
        });
        let mut buf = Vec::new();
        l.write_audit(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"vehicle\":3,\"k\":2,\"a_c\":14.0,\"committed_after\":14.0}\n"
        );
    }

    #[test]
    fn money_display_and_rounding() {
        assert_eq!(units(14.006).to_string(), "14.01");
        assert_eq!(Money::from_cents(-250).to_string(), "-2.50");
        assert!(Money::from_units(f64::NAN).is_err());
    }
}
