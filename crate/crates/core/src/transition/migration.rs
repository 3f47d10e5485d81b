//! Where each worker of a new configuration gets its training state.
//!
//! Sources are tried nearest first: a healthy data-parallel replica, then
//! the in-memory checkpoint, then the remote checkpoint. All copies are
//! issued at once, so the transition waits for the slowest worker.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Layout, SimCosts, WorkerId};

/// Fraction of an iteration spent in the gradient all-reduce. Failures in
/// this window resume through the segment-aware path.
pub const REDUCE_FRACTION: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    DpReplica,
    InMemoryCheckpoint,
    RemoteCheckpoint,
}

impl StateSource {
    pub fn cost(self, costs: &SimCosts) -> f64 {
        match self {
            StateSource::DpReplica => costs.replica_copy_s,
            StateSource::InMemoryCheckpoint => costs.in_memory_load_s,
            StateSource::RemoteCheckpoint => costs.remote_load_s,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MigrationError {
    #[error("layout {layout} needs {needed} workers, got {got}")]
    WorkerCount { layout: Layout, needed: u32, got: usize },
    #[error("no replica or checkpoint holds the state for worker {0}")]
    Unrecoverable(WorkerId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigrationRequest {
    /// Previous layout and its workers in (dp, pp, tp) rank-major order.
    /// `None` for a task that was not running.
    pub old: Option<(Layout, Vec<WorkerId>)>,
    /// Workers that failed since the old layout was set up.
    pub lost: BTreeSet<WorkerId>,
    pub new: Layout,
    pub new_workers: Vec<WorkerId>,
    /// Age of the in-memory checkpoint, if one survives.
    pub in_memory_age: Option<f64>,
    /// Age of the remote checkpoint, if one exists.
    pub remote_age: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerMigration {
    pub worker: WorkerId,
    pub source: StateSource,
    pub cost_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MigrationPlan {
    /// Only workers that need state they do not already hold.
    pub workers: Vec<WorkerMigration>,
    pub cost_s: f64,
}

impl MigrationPlan {
    /// Farthest source any worker had to use.
    pub fn worst_source(&self) -> Option<StateSource> {
        self.workers.iter().map(|w| w.source).max()
    }
}

/// Shard `(stage, tp index)` held by the worker at rank-major position `i`.
fn shard_of(layout: Layout, i: usize) -> (u32, u32) {
    let i = i as u32;
    ((i / layout.tp) % layout.pp, i % layout.tp)
}

fn overlaps(a: u32, a_parts: u32, b: u32, b_parts: u32) -> bool {
    // [a/a_parts, (a+1)/a_parts) against [b/b_parts, (b+1)/b_parts).
    a * b_parts < (b + 1) * a_parts && b * a_parts < (a + 1) * b_parts
}

/// Chooses a state source for every worker of the new layout.
pub fn plan_migration(req: &MigrationRequest, costs: &SimCosts) -> Result<MigrationPlan, MigrationError> {
    if req.new_workers.len() != req.new.workers() as usize {
        return Err(MigrationError::WorkerCount {
            layout: req.new,
            needed: req.new.workers(),
            got: req.new_workers.len(),
        });
    }
    let holders: Vec<(WorkerId, (u32, u32))> = match &req.old {
        Some((layout, workers)) => workers
            .iter()
            .enumerate()
            .filter(|(_, w)| !req.lost.contains(*w))
            .map(|(i, w)| (w.clone(), shard_of(*layout, i)))
            .collect(),
        None => Vec::new(),
    };
    let old_layout = req.old.as_ref().map(|(l, _)| *l);

    let mut plan = MigrationPlan::default();
    for (i, w) in req.new_workers.iter().enumerate() {
        let (stage, tpi) = shard_of(req.new, i);
        let source = match old_layout {
            Some(old) => {
                let needed: Vec<(u32, u32)> = (0..old.pp)
                    .filter(|s| overlaps(stage, req.new.pp, *s, old.pp))
                    .flat_map(|s| {
                        (0..old.tp).filter(move |t| overlaps(tpi, req.new.tp, *t, old.tp)).map(move |t| (s, t))
                    })
                    .collect();
                let already = needed.len() == 1 && holders.iter().any(|(h, sh)| h == w && *sh == needed[0]);
                if already {
                    continue;
                }
                if needed.iter().all(|sh| holders.iter().any(|(_, hs)| hs == sh)) {
                    Some(StateSource::DpReplica)
                } else {
                    None
                }
            }
            None => None,
        };
        let source = source
            .or(req.in_memory_age.map(|_| StateSource::InMemoryCheckpoint))
            .or(req.remote_age.map(|_| StateSource::RemoteCheckpoint))
            .ok_or_else(|| MigrationError::Unrecoverable(w.clone()))?;
        let cost_s = source.cost(costs);
        plan.cost_s = plan.cost_s.max(cost_s);
        plan.workers.push(WorkerMigration { worker: w.clone(), source, cost_s });
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecomputePolicy {
    /// Reload the last persistent checkpoint and redo everything since.
    Restart,
    /// Resume mid-iteration, losing at most the current iteration's work.
    Resume { d_iter: f64 },
}

/// Seconds of lost training redone after a failure `elapsed` seconds after
/// the last checkpoint.
pub fn recomputation_cost(elapsed: f64, policy: RecomputePolicy) -> f64 {
    let elapsed = elapsed.max(0.0);
    match policy {
        RecomputePolicy::Restart => elapsed,
        RecomputePolicy::Resume { d_iter } if d_iter > 0.0 => elapsed % d_iter,
        RecomputePolicy::Resume { .. } => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<WorkerId> {
        (0..n).map(|i| WorkerId::new(format!("{prefix}{i}"))).collect()
    }

    #[test]
    fn replica_when_healthy_peer_exists() {
        let old = ids("w", 4);
        let req = MigrationRequest {
            old: Some((Layout::new(2, 2, 1), old.clone())),
            lost: [old[3].clone()].into(),
            new: Layout::new(2, 2, 1),
            new_workers: vec![old[0].clone(), old[1].clone(), old[2].clone(), "spare".into()],
            in_memory_age: Some(10.0),
            remote_age: Some(100.0),
        };
        let plan = plan_migration(&req, &SimCosts::default()).unwrap();
        assert_eq!(plan.workers.len(), 1);
        assert_eq!(plan.workers[0].source, StateSource::DpReplica);
        assert_eq!(plan.cost_s, 10.0);
    }

    #[test]
    fn single_replica_falls_back_to_checkpoints() {
        let old = ids("w", 2);
        let mut req = MigrationRequest {
            old: Some((Layout::new(1, 2, 1), old.clone())),
            lost: [old[1].clone()].into(),
            new: Layout::new(1, 2, 1),
            new_workers: vec![old[0].clone(), "spare".into()],
            in_memory_age: Some(5.0),
            remote_age: Some(900.0),
        };
        let costs = SimCosts::default();
        assert_eq!(plan_migration(&req, &costs).unwrap().worst_source(), Some(StateSource::InMemoryCheckpoint));
        req.in_memory_age = None;
        let plan = plan_migration(&req, &costs).unwrap();
        assert_eq!(plan.worst_source(), Some(StateSource::RemoteCheckpoint));
        assert_eq!(plan.cost_s, 300.0);
        req.remote_age = None;
        assert!(matches!(plan_migration(&req, &costs), Err(MigrationError::Unrecoverable(_))));
    }

    #[test]
    fn scale_out_replicates() {
        let old = ids("w", 2);
        let mut new = old.clone();
        new.extend(ids("x", 2));
        let req = MigrationRequest {
            old: Some((Layout::new(2, 1, 1), old)),
            lost: BTreeSet::new(),
            new: Layout::new(4, 1, 1),
            new_workers: new,
            in_memory_age: None,
            remote_age: None,
        };
        let plan = plan_migration(&req, &SimCosts::default()).unwrap();
        assert_eq!(plan.workers.len(), 2);
        assert!(plan.workers.iter().all(|w| w.source == StateSource::DpReplica));
    }

    #[test]
    fn pipeline_repartition_needs_all_overlapping_stages() {
        let old = ids("w", 4);
        let req = MigrationRequest {
            old: Some((Layout::new(1, 4, 1), old.clone())),
            lost: [old[0].clone()].into(),
            new: Layout::new(1, 2, 1),
            new_workers: vec![old[1].clone(), old[2].clone()],
            in_memory_age: Some(1.0),
            remote_age: None,
        };
        let plan = plan_migration(&req, &SimCosts::default()).unwrap();
        assert_eq!(plan.workers[0].source, StateSource::InMemoryCheckpoint);
        assert_eq!(plan.workers[1].source, StateSource::DpReplica);
        assert_eq!(plan.cost_s, 30.0);
    }

    #[test]
    fn source_order() {
        assert!(StateSource::DpReplica < StateSource::InMemoryCheckpoint);
        assert!(StateSource::InMemoryCheckpoint < StateSource::RemoteCheckpoint);
    }

    #[test]
    fn recompute() {
        assert_eq!(recomputation_cost(0.0, RecomputePolicy::Restart), 0.0);
        assert_eq!(recomputation_cost(1234.0, RecomputePolicy::Restart), 1234.0);
        let r = recomputation_cost(1234.0, RecomputePolicy::Resume { d_iter: 40.0 });
        assert!(r <= 40.0);
        assert_eq!(r, 34.0);
    }
}
