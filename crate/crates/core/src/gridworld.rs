//! Discrete spatiotemporal grid, sparse trajectories and occupancy density.
//!
//! Coordinates are 1-based throughout: `x ∈ 1..=M`, `y ∈ 1..=N`, `t ∈ 1..=T`.
//! Dense per-cell storage is laid out time-major (`t`, then `y`, then `x`).

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be positive (got {width}x{height}x{horizon})")]
    EmptyGrid {
        width: usize,
        height: usize,
        horizon: usize,
    },
    #[error("slot duration must be positive and finite (got {0})")]
    BadSlotDuration(f64),
    #[error("excluded cell ({x},{y}) lies outside the {width}x{height} grid")]
    ExcludedOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("density requires at least one vehicle")]
    EmptyFleet,
    #[error("vehicle weight must be finite and non-negative (vehicle {vehicle}: {weight})")]
    BadWeight { vehicle: usize, weight: f64 },
    #[error("grid shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("trajectory csv: {0}")]
    Csv(String),
}

/// Shape and exclusion mask of the sensing area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    width: usize,
    height: usize,
    horizon: usize,
    slot_minutes: f64,
    excluded: BTreeSet<(usize, usize)>,
}

impl GridSpec {
    pub fn new(
        width: usize,
        height: usize,
        horizon: usize,
        slot_minutes: f64,
        excluded: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 || horizon == 0 {
            return Err(GridError::EmptyGrid { width, height, horizon });
        }
        if !(slot_minutes > 0.0 && slot_minutes.is_finite()) {
            return Err(GridError::BadSlotDuration(slot_minutes));
        }
        let excluded: BTreeSet<_> = excluded.into_iter().collect();
        for &(x, y) in &excluded {
            if x == 0 || y == 0 || x > width || y > height {
                return Err(GridError::ExcludedOutOfBounds { x, y, width, height });
            }
        }
        Ok(Self {
            width,
            height,
            horizon,
            slot_minutes,
            excluded,
        })
    }

    /// Grid without excluded cells and a 1-minute slot.
    pub fn open(width: usize, height: usize, horizon: usize) -> Result<Self, GridError> {
        Self::new(width, height, horizon, 1.0, [])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn slot_minutes(&self) -> f64 {
        self.slot_minutes
    }

    pub fn excluded(&self) -> &BTreeSet<(usize, usize)> {
        &self.excluded
    }

    /// Same area with a different number of time slots.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self, GridError> {
        Self::new(
            self.width,
            self.height,
            horizon,
            self.slot_minutes,
            self.excluded.iter().copied(),
        )
    }

    pub fn in_bounds(&self, x: usize, y: usize) -> bool {
        (1..=self.width).contains(&x) && (1..=self.height).contains(&y)
    }

    pub fn is_excluded(&self, x: usize, y: usize) -> bool {
        self.excluded.contains(&(x, y))
    }

    /// In bounds and not excluded.
    pub fn is_free(&self, x: usize, y: usize) -> bool {
        self.in_bounds(x, y) && !self.is_excluded(x, y)
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        self.is_free(cell.x, cell.y) && (1..=self.horizon).contains(&cell.t)
    }

    /// Free spatial cells in row-major order.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 1..=self.height {
            for x in 1..=self.width {
                if !self.is_excluded(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn free_cell_count(&self) -> usize {
        self.width * self.height - self.excluded.len()
    }

    /// Number of spatiotemporal cells, excluded ones included.
    pub fn cell_count(&self) -> usize {
        self.width * self.height * self.horizon
    }

    /// Dense index of a spatiotemporal cell; caller guarantees bounds.
    pub fn index(&self, x: usize, y: usize, t: usize) -> usize {
        debug_assert!(self.in_bounds(x, y) && (1..=self.horizon).contains(&t));
        ((t - 1) * self.height + (y - 1)) * self.width + (x - 1)
    }

    /// Inverse of [`GridSpec::index`].
    pub fn cell_at(&self, index: usize) -> CellIndex {
        let x = index % self.width + 1;
        let y = (index / self.width) % self.height + 1;
        let t = index / (self.width * self.height) + 1;
        CellIndex { x, y, t }
    }

    /// Free 4-neighbours of `(x, y)`.
    pub fn neighbors(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let candidates = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
        candidates.into_iter().filter(move |&(nx, ny)| self.is_free(nx, ny))
    }

    /// Whether both grids cover the same spatial area (horizon may differ).
    pub fn same_area(&self, other: &GridSpec) -> bool {
        self.width == other.width && self.height == other.height && self.excluded == other.excluded
    }
}

/// One spatiotemporal cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

impl CellIndex {
    pub fn new(x: usize, y: usize, t: usize) -> Self {
        Self { x, y, t }
    }

    pub fn position(&self) -> (usize, usize) {
        (self.x, self.y)
    }
}

// Time-major ordering so that sorted collections follow the clock.
impl Ord for CellIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.t, self.y, self.x).cmp(&(other.t, other.y, other.x))
    }
}

impl PartialOrd for CellIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.x, self.y, self.t)
    }
}

/// Sparse occupancy of one vehicle: one cell per slot over a contiguous
/// range of slots. Candidate `0` is the vehicle's undisturbed route.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle: usize,
    pub candidate: usize,
    cells: Vec<CellIndex>,
}

impl Trajectory {
    /// Builds a trajectory from occupied cells, sorted by time. No
    /// validation happens here; see [`validate_trajectory`].
    pub fn new(vehicle: usize, candidate: usize, mut cells: Vec<CellIndex>) -> Self {
        cells.sort();
        Self {
            vehicle,
            candidate,
            cells,
        }
    }

    /// Path starting at slot `start`, one position per consecutive slot.
    pub fn from_path(vehicle: usize, candidate: usize, start: usize, path: &[(usize, usize)]) -> Self {
        let cells = path
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| CellIndex::new(x, y, start + i))
            .collect();
        Self {
            vehicle,
            candidate,
            cells,
        }
    }

    pub fn cells(&self) -> &[CellIndex] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn first(&self) -> Option<CellIndex> {
        self.cells.first().copied()
    }

    pub fn last(&self) -> Option<CellIndex> {
        self.cells.last().copied()
    }

    /// Position occupied at slot `t`, if any.
    pub fn at(&self, t: usize) -> Option<(usize, usize)> {
        self.cells
            .binary_search_by(|c| c.t.cmp(&t))
            .ok()
            .map(|i| self.cells[i].position())
    }

    /// Copy relabelled with another candidate index.
    pub fn relabel(&self, vehicle: usize, candidate: usize) -> Self {
        Self {
            vehicle,
            candidate,
            cells: self.cells.clone(),
        }
    }

    /// Shifts every slot by `offset` (window-local to global time).
    pub fn shifted(&self, offset: usize) -> Self {
        Self {
            vehicle: self.vehicle,
            candidate: self.candidate,
            cells: self
                .cells
                .iter()
                .map(|c| CellIndex::new(c.x, c.y, c.t + offset))
                .collect(),
        }
    }

    /// Concatenates trajectories of the same vehicle into one.
    pub fn concat<'a>(vehicle: usize, parts: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let cells = parts.into_iter().flat_map(|p| p.cells.iter().copied()).collect();
        Self::new(vehicle, 0, cells)
    }
}

/// Number of slots at which `a` and `b` occupy the same position.
pub fn overlap_count(a: &Trajectory, b: &Trajectory) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    short
        .cells
        .iter()
        .filter(|c| long.at(c.t) == Some(c.position()))
        .count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    OutOfBounds { cell: CellIndex },
    ExcludedCell { cell: CellIndex },
    Adjacency { from: CellIndex, to: CellIndex },
    DuplicateSlot { t: usize },
    Gap { after: usize, next: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfBounds { cell } => write!(f, "cell {cell} is out of bounds"),
            Violation::ExcludedCell { cell } => write!(f, "cell {cell} is excluded"),
            Violation::Adjacency { from, to } => {
                write!(f, "jump from {from} to {to} is not a 4-neighbour move")
            }
            Violation::DuplicateSlot { t } => write!(f, "slot {t} is occupied twice"),
            Violation::Gap { after, next } => {
                write!(f, "slots {after} and {next} are not contiguous")
            }
        }
    }
}

/// Lists every broken trajectory invariant; empty iff the trajectory is valid.
pub fn validate_trajectory(traj: &Trajectory, grid: &GridSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    for cell in &traj.cells {
        if !grid.in_bounds(cell.x, cell.y) || cell.t == 0 || cell.t > grid.horizon() {
            out.push(Violation::OutOfBounds { cell: *cell });
        } else if grid.is_excluded(cell.x, cell.y) {
            out.push(Violation::ExcludedCell { cell: *cell });
        }
    }
    for pair in traj.cells.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.t == b.t {
            out.push(Violation::DuplicateSlot { t: a.t });
        } else if b.t != a.t + 1 {
            out.push(Violation::Gap { after: a.t, next: b.t });
        } else if a.x.abs_diff(b.x) + a.y.abs_diff(b.y) > 1 {
            out.push(Violation::Adjacency { from: a, to: b });
        }
    }
    out
}

/// Dense real-valued field over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn filled(grid: &GridSpec, value: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![value; grid.cell_count()],
        }
    }

    /// Builds a field by evaluating `f(x, y, t)` on every cell.
    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.cell_count());
        for t in 1..=grid.horizon() {
            for y in 1..=grid.height() {
                for x in 1..=grid.width() {
                    values.push(f(x, y, t));
                }
            }
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> f64 {
        self.values[self.grid.index(x, y, t)]
    }

    pub fn at(&self, cell: CellIndex) -> f64 {
        self.get(cell.x, cell.y, cell.t)
    }

    pub fn set(&mut self, x: usize, y: usize, t: usize, value: f64) {
        let i = self.grid.index(x, y, t);
        self.values[i] = value;
    }

    pub fn add(&mut self, x: usize, y: usize, t: usize, value: f64) {
        let i = self.grid.index(x, y, t);
        self.values[i] += value;
    }

    /// Iterates over `(cell, value)` for every non-excluded cell.
    pub fn free_cells(&self) -> impl Iterator<Item = (CellIndex, f64)> + '_ {
        self.values.iter().enumerate().filter_map(move |(i, &v)| {
            let cell = self.grid.cell_at(i);
            (!self.grid.is_excluded(cell.x, cell.y)).then_some((cell, v))
        })
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.free_cells()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Writes `t,x,y,<value_name>` rows for non-excluded cells.
    pub fn write_csv<W: Write>(&self, writer: W, value_name: &str) -> Result<(), GridError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "x", "y", value_name])
            .map_err(|e| GridError::Csv(e.to_string()))?;
        for (cell, v) in self.free_cells() {
            wtr.write_record([
                cell.t.to_string(),
                cell.x.to_string(),
                cell.y.to_string(),
                v.to_string(),
            ])
            .map_err(|e| GridError::Csv(e.to_string()))?;
        }
        wtr.flush().map_err(|e| GridError::Csv(e.to_string()))
    }
}

/// Reliability-weighted occupancy `P(x,y,t) = Σ_c w_c·D_c(x,y,t) / (C·T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityField {
    field: GridField,
    fleet_size: usize,
    horizon: usize,
}

impl DensityField {
    pub fn field(&self) -> &GridField {
        &self.field
    }

    pub fn grid(&self) -> &GridSpec {
        self.field.grid()
    }

    pub fn fleet_size(&self) -> usize {
        self.fleet_size
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> f64 {
        self.field.get(x, y, t)
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn total(&self) -> f64 {
        self.field.sum()
    }

    /// Builds a density from explicit per-cell values, for callers that
    /// already hold `P` (tests, imported fields). Negative values are
    /// rejected and excluded cells forced to zero.
    pub fn from_values(grid: &GridSpec, values: Vec<f64>, fleet_size: usize) -> Result<Self, GridError> {
        if values.len() != grid.cell_count() {
            return Err(GridError::ShapeMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        if fleet_size == 0 {
            return Err(GridError::EmptyFleet);
        }
        let mut field = GridField::zeros(grid);
        for (i, v) in values.into_iter().enumerate() {
            let cell = grid.cell_at(i);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GridError::BadWeight { vehicle: i, weight: v });
            }
            if !grid.is_excluded(cell.x, cell.y) {
                field.values[i] = v;
            }
        }
        Ok(Self {
            field,
            fleet_size,
            horizon: grid.horizon(),
        })
    }
}

/// Occupancy density of a fleet. `C` is the number of entries and `T` the
/// grid horizon; cells outside the grid or excluded contribute nothing.
pub fn density(grid: &GridSpec, entries: &[(&Trajectory, f64)]) -> Result<DensityField, GridError> {
    if entries.is_empty() {
        return Err(GridError::EmptyFleet);
    }
    let scale = 1.0 / (entries.len() * grid.horizon()) as f64;
    let mut field = GridField::zeros(grid);
    for &(traj, w) in entries {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(GridError::BadWeight {
                vehicle: traj.vehicle,
                weight: w,
            });
        }
        if w == 0.0 {
            continue;
        }
        for cell in traj.cells() {
            if grid.contains(*cell) {
                field.add(cell.x, cell.y, cell.t, w * scale);
            }
        }
    }
    Ok(DensityField {
        field,
        fleet_size: entries.len(),
        horizon: grid.horizon(),
    })
}

/// One row of the trajectory CSV schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub vehicle_id: usize,
    pub candidate_k: usize,
    pub t: usize,
    pub x: usize,
    pub y: usize,
}

/// Writes trajectories as `vehicle_id,candidate_k,t,x,y` rows.
pub fn write_trajectories_csv<'a, W: Write>(
    writer: W,
    trajectories: impl IntoIterator<Item = &'a Trajectory>,
) -> Result<(), GridError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(["vehicle_id", "candidate_k", "t", "x", "y"])
        .map_err(|e| GridError::Csv(e.to_string()))?;
    for traj in trajectories {
        for cell in traj.cells() {
            wtr.serialize(TrajectoryRow {
                vehicle_id: traj.vehicle,
                candidate_k: traj.candidate,
                t: cell.t,
                x: cell.x,
                y: cell.y,
            })
            .map_err(|e| GridError::Csv(e.to_string()))?;
        }
    }
    wtr.flush().map_err(|e| GridError::Csv(e.to_string()))
}

/// Parsed trajectory rows with their 1-based file line numbers.
pub fn read_trajectory_rows<R: Read>(reader: R) -> Result<Vec<(usize, TrajectoryRow)>, GridError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| GridError::Csv(e.to_string()))?.clone();
    let expected = ["vehicle_id", "candidate_k", "t", "x", "y"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(GridError::Csv(format!(
            "line 1: expected header {}, found {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| GridError::Csv(e.to_string()))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: TrajectoryRow = record
            .deserialize(Some(&headers))
            .map_err(|e| GridError::Csv(format!("line {line}: {e}")))?;
        rows.push((line, row));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize, n: usize, t: usize) -> GridSpec {
        GridSpec::open(m, n, t).unwrap()
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(GridSpec::open(0, 3, 3).is_err());
        assert!(GridSpec::new(3, 3, 3, 0.0, []).is_err());
        assert!(matches!(
            GridSpec::new(3, 3, 3, 2.0, [(4, 1)]),
            Err(GridError::ExcludedOutOfBounds { .. })
        ));
    }

    #[test]
    fn index_round_trips() {
        let g = grid(4, 3, 5);
        for i in 0..g.cell_count() {
            let c = g.cell_at(i);
            assert_eq!(g.index(c.x, c.y, c.t), i);
        }
    }

    #[test]
    fn self_overlap_is_length() {
        let a = Trajectory::from_path(0, 0, 1, &[(1, 1), (2, 1), (3, 1), (3, 2), (3, 3)]);
        assert_eq!(overlap_count(&a, &a), 5);
    }

    #[test]
    fn disjoint_overlap_is_zero() {
        let a = Trajectory::from_path(0, 0, 1, &[(1, 1), (2, 1)]);
        let b = Trajectory::from_path(1, 0, 1, &[(4, 4), (4, 3)]);
        assert_eq!(overlap_count(&a, &b), 0);
    }

    #[test]
    fn partial_overlap_counts_shared_slots() {
        let a = Trajectory::from_path(0, 0, 1, &[(1, 1), (1, 1), (1, 1)]);
        let b = Trajectory::from_path(1, 0, 2, &[(1, 1), (1, 1)]);
        assert_eq!(overlap_count(&a, &b), 2);
        assert_eq!(overlap_count(&b, &a), 2);
    }

    #[test]
    fn single_vehicle_density() {
        let g = grid(3, 3, 1);
        let a = Trajectory::from_path(0, 0, 1, &[(2, 2)]);
        let p = density(&g, &[(&a, 1.0)]).unwrap();
        assert_eq!(p.get(2, 2, 1), 1.0);
        assert_eq!(p.total(), 1.0);
    }

    #[test]
    fn two_vehicles_stacked_in_one_cell() {
        let g = grid(3, 3, 2);
        let a = Trajectory::from_path(0, 0, 1, &[(1, 1), (1, 1)]);
        let b = Trajectory::from_path(1, 0, 1, &[(1, 1), (1, 1)]);
        let p = density(&g, &[(&a, 1.0), (&b, 1.0)]).unwrap();
        // each slot holds 2/(2*2); the cell is counted per slot
        assert_eq!(p.get(1, 1, 1) + p.get(1, 1, 2), 1.0);
        assert_eq!(p.get(1, 1, 1), 0.5);
    }

    #[test]
    fn zero_weights_give_zero_density() {
        let g = grid(3, 3, 2);
        let a = Trajectory::from_path(0, 0, 1, &[(1, 1), (1, 2)]);
        let b = Trajectory::from_path(1, 0, 1, &[(2, 1), (2, 2)]);
        let p = density(&g, &[(&a, 0.0), (&b, 0.0)]).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn density_rejects_empty_and_negative() {
        let g = grid(2, 2, 1);
        assert_eq!(density(&g, &[]), Err(GridError::EmptyFleet));
        let a = Trajectory::from_path(0, 0, 1, &[(1, 1)]);
        assert!(density(&g, &[(&a, -1.0)]).is_err());
    }

    #[test]
    fn validation_reports() {
        let g = GridSpec::new(5, 5, 5, 2.0, [(3, 3)]).unwrap();
        let ok = Trajectory::from_path(0, 0, 1, &[(1, 1), (2, 1), (2, 2), (2, 2)]);
        assert!(validate_trajectory(&ok, &g).is_empty());

        let excl = Trajectory::from_path(0, 0, 1, &[(2, 3), (3, 3)]);
        assert_eq!(
            validate_trajectory(&excl, &g),
            vec![Violation::ExcludedCell {
                cell: CellIndex::new(3, 3, 2)
            }]
        );

        let jump = Trajectory::from_path(0, 0, 1, &[(1, 1), (4, 1)]);
        let v = validate_trajectory(&jump, &g);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::Adjacency { .. }));

        let dup = Trajectory::new(0, 0, vec![CellIndex::new(1, 1, 1), CellIndex::new(1, 2, 1)]);
        assert_eq!(validate_trajectory(&dup, &g), vec![Violation::DuplicateSlot { t: 1 }]);

        let gap = Trajectory::new(0, 0, vec![CellIndex::new(1, 1, 1), CellIndex::new(1, 1, 3)]);
        assert!(matches!(
            validate_trajectory(&gap, &g)[..],
            [Violation::Gap { after: 1, next: 3 }]
        ));

        let oob = Trajectory::from_path(0, 0, 5, &[(1, 1), (1, 1)]);
        assert!(matches!(
            validate_trajectory(&oob, &g)[..],
            [Violation::OutOfBounds { .. }]
        ));
    }

    #[test]
    fn csv_round_trip() {
        let a = Trajectory::from_path(3, 0, 1, &[(1, 1), (2, 1)]);
        let b = Trajectory::from_path(7, 2, 2, &[(4, 4)]);
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, [&a, &b]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("vehicle_id,candidate_k,t,x,y\n"));
        let rows = read_trajectory_rows(&buf[..]).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].0, 2);
        assert_eq!(
            rows[2].1,
            TrajectoryRow {
                vehicle_id: 7,
                candidate_k: 2,
                t: 2,
                x: 4,
                y: 4
            }
        );
    }
}
