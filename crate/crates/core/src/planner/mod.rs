//! Reconfiguration plan generation.
//!
//! A task's value is its weighted achieved FLOP/s (WAF). After a failure or
//! any other trigger the planner picks new worker counts maximizing the
//! cluster-wide reward: WAF times the expected time until the next failure,
//! minus the WAF lost while reconfigured tasks are in transition. The
//! search is a knapsack-style dynamic program over (task, workers).

mod dp;
mod lookup;
mod oracle;
mod synth;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::domain::{table_lookup, CostParams, Plan, TaskId, TaskPlan, TaskSpec};

pub use dp::{solve, solve_with_table, DpTable};
pub use lookup::{precompute_lookup, LookupTable, Perturbation};
pub use oracle::{brute_force_solve, MAX_ORACLE_TASKS, MAX_ORACLE_WORKERS};
pub use synth::{best_layout, layers_for, micro_batches_for, min_feasible_workers, synthesize_table};

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("instance too large for exhaustive search: {tasks} tasks, {workers} workers (limit {max_tasks} / {max_workers})")]
    TooLarge { tasks: usize, workers: u32, max_tasks: usize, max_workers: u32 },
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
}

/// Everything one planner invocation needs.
#[derive(Debug, Clone)]
pub struct RewardInputs {
    pub tasks: Vec<TaskSpec>,
    /// Worker count each task holds now, aligned with `tasks`.
    pub current: Vec<u32>,
    /// Tasks that lost a worker to the event being handled.
    pub faulted: BTreeSet<TaskId>,
    /// Healthy workers available after the event.
    pub capacity: u32,
    pub cost: CostParams,
}

impl RewardInputs {
    pub fn new(tasks: Vec<TaskSpec>, capacity: u32, cost: CostParams) -> Self {
        let current = vec![0; tasks.len()];
        Self { tasks, current, faulted: BTreeSet::new(), capacity, cost }
    }

    pub fn with_current(mut self, current: &[u32]) -> Self {
        self.current = current.to_vec();
        self
    }

    pub fn with_fault(mut self, task: TaskId) -> Self {
        self.faulted.insert(task);
        self
    }

    pub fn index_of(&self, id: &TaskId) -> Option<usize> {
        self.tasks.iter().position(|t| &t.id == id)
    }

    pub fn is_faulted(&self, i: usize) -> bool {
        self.faulted.contains(&self.tasks[i].id)
    }

    /// Reward of giving task `i` exactly `k` workers.
    pub fn gain(&self, i: usize, k: u32) -> f64 {
        reward(&self.tasks[i], self.current[i], k, self.capacity, self.is_faulted(i), &self.cost)
    }

    /// Worker counts the planner may give task `i`: zero plus every
    /// calibrated point at or above the minimum requirement that fits.
    pub fn candidates(&self, i: usize) -> Vec<u32> {
        let mut c = vec![0];
        c.extend(
            self.tasks[i]
                .calibration
                .schedulable()
                .map(|(x, _)| x)
                .filter(|x| *x >= self.tasks[i].min_workers && *x <= self.capacity),
        );
        c
    }

    /// Tie-break key: keeping the current count first, then fewer workers.
    pub(crate) fn preference(&self, i: usize, k: u32) -> (bool, u32) {
        (k != self.current[i], k)
    }

    pub(crate) fn make_plan(&self, assignment: &[u32], objective: f64) -> Plan {
        let tasks = self
            .tasks
            .iter()
            .zip(assignment)
            .map(|(t, &x)| TaskPlan {
                id: t.id.clone(),
                x,
                layout: if x == 0 { None } else { t.calibration.get(x).map(|c| c.layout) },
                micro_batches: Vec::new(),
            })
            .collect();
        Plan { tasks, objective }
    }
}

/// Weighted achieved aggregate FLOP/s; zero unless the minimum requirement holds.
pub fn waf(t: &TaskSpec, x: u32) -> f64 {
    if x >= t.min_workers {
        t.weight * table_lookup(&t.calibration, x)
    } else {
        0.0
    }
}

/// Expected time until the next sev1 failure among `n` workers with
/// independent exponential lifetimes, capped at the horizon.
pub fn expected_run_duration(n: u32, cost: &CostParams) -> f64 {
    if n == 0 {
        return cost.horizon;
    }
    cost.horizon.min(1.0 / (f64::from(n) * cost.lambda_worker))
}

/// Reward of moving task `t` from `x` to `x_new` workers in a cluster of
/// `n` healthy workers. The transition penalty applies when the count
/// changes or one of the task's workers faulted.
pub fn reward(t: &TaskSpec, x: u32, x_new: u32, n: u32, faulted: bool, cost: &CostParams) -> f64 {
    let running = waf(t, x_new) * expected_run_duration(n, cost);
    let moved = x != x_new || faulted;
    let penalty = if moved { waf(t, x) * cost.d_transition } else { 0.0 };
    running - penalty
}

/// Splits `micro_batches` over `dp` ranks round-robin.
pub fn micro_batch_split(micro_batches: u32, dp: u32) -> Vec<u32> {
    if dp == 0 {
        return Vec::new();
    }
    (0..dp).map(|r| micro_batches / dp + u32::from(r < micro_batches % dp)).collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::domain::{Layout, ThroughputTable};

    pub(crate) fn task(id: &str, weight: f64, min: u32, points: &[(u32, f64)]) -> TaskSpec {
        let mut tbl = ThroughputTable::new(id.into(), min);
        for &(x, f) in points {
            tbl.insert(x, f, Layout::new(x, 1, 1)).unwrap();
        }
        TaskSpec { id: id.into(), model_size: 1e9, weight, min_workers: min, d_iter: 30.0, calibration: Arc::new(tbl) }
    }

    #[test]
    fn waf_cases() {
        let t = task("a", 1.0, 4, &[(2, 10.0), (4, 50.0), (8, 100.0)]);
        assert_eq!(waf(&t, 2), 0.0);
        assert_eq!(waf(&t, 0), 0.0);
        let t2 = task("b", 2.0, 4, &[(8, 100.0)]);
        assert_eq!(waf(&t2, 8), 200.0);
        let half = task("c", 0.5, 1, &[(1, 3.0), (2, 7.0), (3, 9.5)]);
        for (x, f) in [(1, 3.0), (2, 7.0), (3, 9.5)] {
            assert_eq!(waf(&half, x), 0.5 * f);
        }
    }

    #[test]
    fn run_duration() {
        let cost = CostParams { lambda_worker: 1e-6, horizon: 1e9, ..CostParams::default() };
        assert_eq!(expected_run_duration(128, &cost), 1.0 / (128.0 * 1e-6));
        assert!((expected_run_duration(128, &cost) - 7812.5).abs() < 1e-9);
        assert_eq!(expected_run_duration(256, &cost) * 2.0, expected_run_duration(128, &cost));
        assert_eq!(expected_run_duration(0, &cost), 1e9);
        let capped = CostParams { horizon: 1000.0, ..cost };
        assert_eq!(expected_run_duration(128, &capped), 1000.0);
    }

    #[test]
    fn reward_penalty_cases() {
        let cost = CostParams { lambda_worker: 1e-6, d_transition: 60.0, horizon: 1e9, checkpoint_interval: 1800.0 };
        let t = task("a", 1.0, 1, &[(4, 100.0), (8, 180.0)]);
        let d = expected_run_duration(16, &cost);
        assert_eq!(reward(&t, 4, 4, 16, false, &cost), 100.0 * d);
        // New task: penalty is F(t,0) * D = 0.
        assert_eq!(reward(&t, 0, 8, 16, false, &cost), 180.0 * d);
        // Faulted task kept at the same size still pays.
        assert_eq!(reward(&t, 4, 4, 16, true, &cost), 100.0 * d - 100.0 * 60.0);
        assert_eq!(reward(&t, 4, 8, 16, false, &cost), 180.0 * d - 100.0 * 60.0);
    }

    #[test]
    fn split() {
        assert_eq!(micro_batch_split(8, 2), vec![4, 4]);
        assert_eq!(micro_batch_split(10, 4), vec![3, 3, 2, 2]);
        assert!(micro_batch_split(3, 0).is_empty());
    }
}
