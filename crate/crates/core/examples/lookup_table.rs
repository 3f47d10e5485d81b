//! Precomputed plans for every single-step perturbation, checked against
//! solving from scratch, and how much faster retrieval is.
//!
//! cargo run --release --example lookup_table

use std::time::Instant;

use unicron::domain::Health;
use unicron::planner::{precompute_lookup, solve, RewardInputs};
use unicron::workload::{build_tasks, case_config};

fn main() {
    let cfg = case_config(2, 16, 8).unwrap();
    let tasks = build_tasks(&cfg, None).unwrap();
    let mut cluster = cfg.cluster();
    cluster.set_node_health(&"n15".into(), Health::Lost);
    let base = RewardInputs::new(tasks, cluster.healthy_count(), cfg.cost_params);
    let plan = solve(&base);
    let mut free = cluster.free_workers().into_iter();
    for tp in &plan.tasks {
        cluster.assign(&tp.id, free.by_ref().take(tp.x as usize).collect());
    }
    let base = base.with_current(&plan.assignment());

    let start = Instant::now();
    let table = precompute_lookup(&cluster, &base, 8);
    let build = start.elapsed();

    let mut fresh_total = std::time::Duration::ZERO;
    let mut hit_total = std::time::Duration::ZERO;
    for (p, cached) in table.iter() {
        let t = Instant::now();
        let fresh = solve(&p.apply(&cluster, &base));
        fresh_total += t.elapsed();
        let t = Instant::now();
        let hit = table.get(p).unwrap();
        hit_total += t.elapsed();
        assert_eq!(&fresh, cached);
        assert_eq!(hit, cached);
        println!("{p:<14} {:?}", cached.assignment());
    }
    println!(
        "{} entries built in {build:?}; fresh solves {fresh_total:?} total, lookups {hit_total:?} total",
        table.len()
    );
}
