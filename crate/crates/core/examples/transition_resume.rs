//! Resuming a failed iteration without losing the partial gradients, and
//! gathering state for a new layout from the nearest source.
//!
//! cargo run --example transition_resume

use unicron::domain::{Layout, SimCosts, WorkerId};
use unicron::transition::{
    plan_migration, recomputation_cost, run_sweep, sweep_grid, verify_case, FailurePoint, MigrationRequest,
    RecomputePolicy, VerifyCase,
};

fn main() {
    for point in [FailurePoint::AfterMicroBatch(2), FailurePoint::AfterReducedSegments(1)] {
        let case = VerifyCase { dp: 4, pp: 2, micro_batches: 12, fail_rank: 1, fail_stage: 1, point };
        println!("{case}: {:?}", verify_case(&case, 42).unwrap());
    }
    let grid = sweep_grid();
    let r = run_sweep(&grid, 42).unwrap();
    println!("sweep: {} cases, {} equal, {} unequal", r.cases, r.equal, r.unequal.len());

    // dp2 x pp2 loses one worker and grows to dp3 on fresh hardware.
    let old: Vec<WorkerId> = (0..4).map(|i| WorkerId::new(format!("w{i}"))).collect();
    let mut new_workers = old.clone();
    new_workers[1] = "fresh0".into();
    new_workers.extend(["fresh1".into(), "fresh2".into()]);
    let req = MigrationRequest {
        old: Some((Layout::new(2, 2, 1), old.clone())),
        lost: [old[1].clone()].into(),
        new: Layout::new(3, 2, 1),
        new_workers,
        in_memory_age: Some(120.0),
        remote_age: Some(900.0),
    };
    let plan = plan_migration(&req, &SimCosts::default()).unwrap();
    for m in &plan.workers {
        println!("{} <- {:?} ({}s)", m.worker, m.source, m.cost_s);
    }
    println!("transition waits {}s", plan.cost_s);

    let elapsed = 1250.0;
    println!(
        "failure {elapsed}s after a checkpoint: restart redoes {}s, resume redoes {}s",
        recomputation_cost(elapsed, RecomputePolicy::Restart),
        recomputation_cost(elapsed, RecomputePolicy::Resume { d_iter: 40.0 })
    );
}
