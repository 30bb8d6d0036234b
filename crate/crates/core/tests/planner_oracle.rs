mod common;

use common::{random_instance, reference_plan, ORACLE_LIMITS};
use quids_core::dispatch::plan;
use quids_core::incentive::BudgetLedger;

#[test]
fn greedy_steps_match_exhaustive_reference() {
    let mut dispatching = 0;
    for seed in 0..2000 {
        let inst = random_instance(seed, &ORACLE_LIMITS);
        let mut ledger = BudgetLedger::new(inst.params.budget);
        let out = plan(&inst.context(), inst.policy, &mut ledger).unwrap();
        let got: Vec<(usize, usize, i64)> = out
            .steps
            .iter()
            .map(|s| {
                assert_eq!(s.dispatched.len(), 1);
                let d = s.dispatched[0];
                (d.c, d.k, d.a_c.cents())
            })
            .collect();
        let want: Vec<(usize, usize, i64)> = reference_plan(&inst, inst.params.budget.cents())
            .into_iter()
            .map(|r| (r.vehicle, r.k, r.cents))
            .collect();
        assert_eq!(got, want, "instance {seed}");
        if !want.is_empty() {
            dispatching += 1;
        }
    }
    assert!(dispatching >= 200, "only {dispatching} instances dispatched anything");
}
