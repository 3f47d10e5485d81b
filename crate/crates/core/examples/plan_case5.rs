//! Optimal worker assignment for the six-task mixed workload, before and
//! after losing a node.
//!
//! cargo run --example plan_case5

use unicron::planner::{precompute_lookup, solve, waf, Perturbation, RewardInputs};
use unicron::workload::{build_tasks, case_config};

fn main() {
    let cfg = case_config(5, 16, 8).expect("case 5 exists");
    let tasks = build_tasks(&cfg, None).expect("synthesized tables");
    let cluster = cfg.cluster();
    let capacity = cluster.healthy_count();

    let inputs = RewardInputs::new(tasks.clone(), capacity, cfg.cost_params);
    let plan = solve(&inputs);
    println!("{capacity} workers, {} tasks", tasks.len());
    println!("{:<10} {:>6} {:>4} {:>14} {:>14}", "task", "weight", "x", "layout", "WAF (PFLOP/s)");
    for (t, tp) in tasks.iter().zip(&plan.tasks) {
        let layout = tp.layout.map_or("-".to_string(), |l| l.to_string());
        println!("{:<10} {:>6.1} {:>4} {:>14} {:>14.1}", t.id, t.weight, tp.x, layout, waf(t, tp.x) / 1e15);
    }

    // Place the plan so that a node fault hits real tasks, then ask the
    // lookup table what to do if node n0 dies.
    let mut placed = cluster.clone();
    let mut free = placed.free_workers().into_iter();
    for tp in &plan.tasks {
        placed.assign(&tp.id, free.by_ref().take(tp.x as usize).collect());
    }
    let running = inputs.clone().with_current(&plan.assignment());
    let table = precompute_lookup(&placed, &running, 8);
    let fault = Perturbation::NodeFault("n0".into());
    let after = table.get(&fault).expect("every healthy node has an entry");
    println!("\n{} precomputed plans; on {fault}: {:?} -> {:?}", table.len(), plan.assignment(), after.assignment());
}
