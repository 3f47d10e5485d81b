//! Random instance builders shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use unicron::domain::{ClusterState, CostParams, Health, Layout, TaskSpec, ThroughputTable, WorkerId};
use unicron::planner::RewardInputs;
use unicron::simulator::SimSetup;
use unicron::workload::{build_tasks, case_config};

/// Task with a random, possibly non-monotonic table over a random subset of `1..=max_x`.
pub fn random_task<R: Rng>(rng: &mut R, idx: usize, max_x: u32) -> TaskSpec {
    let min_workers = rng.random_range(1..=6.min(max_x.max(1)));
    let mut tbl = ThroughputTable::new(format!("t{idx}").into(), min_workers);
    for x in 1..=max_x {
        if rng.random_bool(0.6) {
            let flops = f64::from(x) * rng.random_range(0.5..1.5) * 1e12;
            tbl.insert(x, flops, Layout::new(x, 1, 1)).unwrap();
        }
    }
    TaskSpec {
        id: format!("t{idx}").into(),
        model_size: 1e9,
        weight: rng.random_range(0.5..=2.0),
        min_workers,
        d_iter: 30.0,
        calibration: Arc::new(tbl),
    }
}

/// Planner inputs with up to `max_tasks` tasks and capacity up to `max_n`,
/// random current counts and a random set of faulted tasks.
pub fn random_inputs<R: Rng>(rng: &mut R, max_tasks: usize, max_n: u32) -> RewardInputs {
    let m = rng.random_range(1..=max_tasks);
    let n = rng.random_range(0..=max_n);
    let tasks: Vec<TaskSpec> = (0..m).map(|i| random_task(rng, i, max_n.max(1))).collect();
    let current: Vec<u32> =
        (0..m).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..=max_n / 2) }).collect();
    let cost = CostParams {
        lambda_worker: 10f64.powf(rng.random_range(-8.0..-4.0)),
        d_transition: rng.random_range(0.0..600.0),
        checkpoint_interval: 1800.0,
        horizon: rng.random_range(3600.0..5e6),
    };
    let mut inputs = RewardInputs::new(tasks, n, cost).with_current(&current);
    for i in 0..m {
        if rng.random_bool(0.3) {
            let id = inputs.tasks[i].id.clone();
            inputs = inputs.with_fault(id);
        }
    }
    inputs
}

/// A small cluster with some nodes down and tasks placed on healthy workers,
/// plus planner inputs describing it.
pub fn random_state<R: Rng>(rng: &mut R) -> (ClusterState, RewardInputs) {
    let nodes = rng.random_range(2..=5);
    let gpus = rng.random_range(2..=4);
    let mut cluster = ClusterState::uniform(nodes, gpus);
    for i in 0..nodes {
        if rng.random_bool(0.2) {
            let id = cluster.nodes[i].node_id.clone();
            cluster.set_node_health(&id, Health::Lost);
        }
    }
    let capacity = cluster.healthy_count();
    let m = rng.random_range(1..=4);
    let tasks: Vec<TaskSpec> = (0..m).map(|i| random_task(rng, i, (nodes * gpus) as u32)).collect();
    let mut free: Vec<WorkerId> =
        cluster.workers.iter().filter(|w| w.health == Health::Healthy).map(|w| w.worker_id.clone()).collect();
    let mut current = Vec::with_capacity(m);
    for t in &tasks {
        let fits: Vec<u32> =
            t.calibration.schedulable().map(|(x, _)| x).filter(|x| *x as usize <= free.len()).collect();
        let x = if fits.is_empty() || rng.random_bool(0.2) { 0 } else { fits[rng.random_range(0..fits.len())] };
        if x > 0 {
            let held: BTreeSet<WorkerId> = free.drain(..x as usize).collect();
            cluster.assign(&t.id, held);
        }
        current.push(x);
    }
    let cost = CostParams::default();
    (cluster, RewardInputs::new(tasks, capacity, cost).with_current(&current))
}

/// The six-task mixed workload on 16 nodes of 8 GPUs.
pub fn case5_setup() -> SimSetup {
    let cfg = case_config(5, 16, 8).unwrap();
    SimSetup::from_config(&cfg, build_tasks(&cfg, None).unwrap())
}

pub fn node_list(cluster: &ClusterState) -> Vec<(unicron::domain::NodeId, usize)> {
    cluster.nodes.iter().map(|n| (n.node_id.clone(), n.worker_ids.len())).collect()
}
