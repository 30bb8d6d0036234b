//! Random small planning instances and an exhaustive reference planner
//! written without any of the crate's density or V helpers.

#![allow(dead_code)]

use std::cmp::Ordering;

use quids_core::dispatch::{CandidateSet, IncentivePolicy, PlanContext};
use quids_core::gridworld::{GridField, GridSpec, Trajectory};
use quids_core::incentive::{DemandField, IncentiveParams, Money};
use quids_core::metrics::AsqConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Weights are drawn in halves so the reference planner can work with
/// integers.
const HALF_WEIGHTS: [i64; 6] = [0, 1, 2, 3, 4, 6];
/// Unit rates in halves.
const HALF_RATES: [i64; 5] = [1, 2, 4, 8, 15];

pub struct Instance {
    pub grid: GridSpec,
    pub sets: Vec<CandidateSet>,
    /// Weights times two.
    pub half_weights: Vec<i64>,
    pub weights: Vec<f64>,
    /// Demand times four, indexed `[t][y][x]` with zero-based coordinates.
    pub quarter_demand: Vec<Vec<Vec<i64>>>,
    pub demand: DemandField,
    /// Unit rate times two.
    pub half_rate: i64,
    pub params: IncentiveParams,
    pub policy: IncentivePolicy,
    pub asq: AsqConfig,
}

impl Instance {
    pub fn context(&self) -> PlanContext<'_> {
        PlanContext {
            grid: &self.grid,
            candidates: &self.sets,
            weights: &self.weights,
            demand: &self.demand,
            params: &self.params,
            asq: &self.asq,
        }
    }
}

pub struct Limits {
    pub max_vehicles: usize,
    pub max_alternates: usize,
    pub max_horizon: usize,
    pub max_side: usize,
}

pub const ORACLE_LIMITS: Limits = Limits {
    max_vehicles: 3,
    max_alternates: 3,
    max_horizon: 2,
    max_side: 3,
};

pub fn random_instance(seed: u64, limits: &Limits) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.random_range(1..=limits.max_side);
    let height = rng.random_range(1..=limits.max_side);
    let horizon = rng.random_range(1..=limits.max_horizon);
    let grid = GridSpec::open(width, height, horizon).unwrap();
    let vehicles = rng.random_range(1..=limits.max_vehicles);

    let mut ids: Vec<usize> = (0..10 * limits.max_vehicles).collect();
    ids.shuffle(&mut rng);
    ids.truncate(vehicles);

    let uniform = rng.random_bool(0.3);
    let shared = HALF_WEIGHTS[rng.random_range(1..HALF_WEIGHTS.len())];
    let half_weights: Vec<i64> = (0..vehicles)
        .map(|_| {
            if uniform {
                shared
            } else {
                HALF_WEIGHTS[rng.random_range(0..HALF_WEIGHTS.len())]
            }
        })
        .collect();
    let weights = half_weights.iter().map(|&h| h as f64 / 2.0).collect();

    // a few cells are favoured so that trajectories collide often
    let hot: Vec<(usize, usize)> = (0..2)
        .map(|_| (rng.random_range(1..=width), rng.random_range(1..=height)))
        .collect();
    let path = |rng: &mut ChaCha8Rng| -> Vec<(usize, usize)> {
        (0..horizon)
            .map(|_| {
                if rng.random_bool(0.5) {
                    hot[rng.random_range(0..hot.len())]
                } else {
                    (rng.random_range(1..=width), rng.random_range(1..=height))
                }
            })
            .collect()
    };
    let sets = ids
        .iter()
        .map(|&v| {
            let alternates = rng.random_range(0..=limits.max_alternates);
            let candidates = (0..=alternates)
                .map(|k| Trajectory::from_path(v, k, 1, &path(&mut rng)))
                .collect();
            CandidateSet::new(v, candidates).unwrap()
        })
        .collect();

    let quarter_demand: Vec<Vec<Vec<i64>>> = (0..horizon)
        .map(|_| {
            (0..height)
                .map(|_| (0..width).map(|_| rng.random_range(0..=4)).collect())
                .collect()
        })
        .collect();
    let qd = quarter_demand.clone();
    let demand = DemandField::from_field(GridField::from_fn(&grid, |x, y, t| {
        qd[t - 1][y - 1][x - 1] as f64 / 4.0
    }));

    let r_min = rng.random_range(1..=5) * 100;
    let r_max = r_min + rng.random_range(0..=15) * 100;
    let half_rate = HALF_RATES[rng.random_range(0..HALF_RATES.len())];
    let budget = rng.random_range(0..=8) * r_max.max(100) / 2 + rng.random_range(0..=3) * 37;
    let params = IncentiveParams::with_unit_rate(
        Money::from_cents(r_min),
        Money::from_cents(r_max),
        half_rate as f64 / 2.0,
        Money::from_cents(budget),
    )
    .unwrap();
    let policy = if rng.random_bool(0.7) {
        IncentivePolicy::Quoted
    } else {
        IncentivePolicy::Constant(Money::from_cents(rng.random_range(r_min..=r_max)))
    };

    Instance {
        grid,
        sets,
        half_weights,
        weights,
        quarter_demand,
        demand,
        half_rate,
        params,
        policy,
        asq: AsqConfig::default(),
    }
}

/// A non-positive rational `-num / den` with `den > 0`.
#[derive(Debug, Clone, Copy)]
struct Value {
    num: i128,
    den: i128,
}

impl Value {
    fn cmp(self, other: Value) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn cells(t: &Trajectory) -> Vec<(usize, usize, usize)> {
    t.cells().iter().map(|c| (c.x, c.y, c.t)).collect()
}

/// One dispatch chosen by the reference planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceStep {
    pub vehicle: usize,
    pub k: usize,
    pub cents: i64,
}

fn quote_cents(inst: &Instance, set: &CandidateSet, k: usize) -> i64 {
    let q = |t: &Trajectory| -> i64 {
        cells(t)
            .iter()
            .map(|&(x, y, tt)| inst.quarter_demand[tt - 1][y - 1][x - 1])
            .sum()
    };
    let gain_quarters = q(&set.candidates()[k]) - q(set.original());
    // twice the unrounded amount in cents: 2·r_max − r_u·gain·100·2
    let twice = 2 * inst.params.r_max.cents() - inst.half_rate * gain_quarters * 25;
    let rounded = if twice % 2 == 0 {
        twice / 2
    } else {
        (twice + twice.signum()) / 2
    };
    rounded.clamp(inst.params.r_min.cents(), inst.params.r_max.cents())
}

/// Exhaustive greedy planner: at every step each undispatched vehicle's best
/// candidate is found by enumerating all of them, affordable ones are
/// reserved in belief order and the largest V wins.
pub fn reference_plan(inst: &Instance, budget_cents: i64) -> Vec<ReferenceStep> {
    let n = inst.sets.len();
    let mut choice = vec![0usize; n];
    let mut dispatched = vec![false; n];
    let mut committed = 0i64;
    let mut steps = Vec::new();

    loop {
        let chosen: Vec<Vec<(usize, usize, usize)>> =
            (0..n).map(|i| cells(&inst.sets[i].candidates()[choice[i]])).collect();
        let overlap_total: Vec<usize> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| chosen[i].iter().filter(|c| chosen[j].contains(c)).count())
                    .sum()
            })
            .collect();
        // ln 0 is taken as 0, which ties with ln 1
        let rank = |i: usize| if overlap_total[i] <= 1 { 0 } else { overlap_total[i] };
        let mut order: Vec<usize> = (0..n).filter(|&i| !dispatched[i]).collect();
        order.sort_by(|&a, &b| {
            rank(b)
                .cmp(&rank(a))
                .then(inst.sets[a].vehicle().cmp(&inst.sets[b].vehicle()))
        });

        let mut reserved = 0i64;
        let mut shortlist: Vec<(usize, usize, Value, i64)> = Vec::new();
        for &i in &order {
            let mass: i128 = (0..n)
                .filter(|&j| j != i)
                .map(|j| inst.half_weights[j] as i128 * chosen[j].len() as i128)
                .sum();
            let value = |k: usize| -> Value {
                if mass == 0 {
                    return Value { num: 0, den: 1 };
                }
                let hits: i128 = cells(&inst.sets[i].candidates()[k])
                    .iter()
                    .map(|c| {
                        (0..n)
                            .filter(|&j| j != i && chosen[j].contains(c))
                            .map(|j| inst.half_weights[j] as i128)
                            .sum::<i128>()
                    })
                    .sum();
                Value {
                    num: -(inst.half_weights[i] as i128) * hits,
                    den: 2 * mass,
                }
            };
            let mut best = (0, value(0));
            for k in 1..inst.sets[i].candidates().len() {
                let v = value(k);
                if v.cmp(best.1) == Ordering::Greater {
                    best = (k, v);
                }
            }
            if best.0 == 0 {
                continue;
            }
            let cents = match inst.policy {
                IncentivePolicy::Quoted => quote_cents(inst, &inst.sets[i], best.0),
                IncentivePolicy::Constant(m) => m.cents(),
            };
            if committed + reserved + cents > budget_cents {
                continue;
            }
            reserved += cents;
            shortlist.push((i, best.0, best.1, cents));
        }

        let mut winner: Option<(usize, usize, Value, i64)> = None;
        for cand in shortlist {
            winner = match winner {
                None => Some(cand),
                Some(w) => match cand.2.cmp(w.2) {
                    Ordering::Greater => Some(cand),
                    Ordering::Equal if inst.sets[cand.0].vehicle() < inst.sets[w.0].vehicle() => Some(cand),
                    _ => Some(w),
                },
            };
        }
        let Some((i, k, _, cents)) = winner else {
            break;
        };
        dispatched[i] = true;
        choice[i] = k;
        committed += cents;
        steps.push(ReferenceStep {
            vehicle: inst.sets[i].vehicle(),
            k,
            cents,
        });
    }
    steps
}
