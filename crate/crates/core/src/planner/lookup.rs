use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use super::{solve, RewardInputs};
use crate::domain::{ClusterState, Health, NodeId, Plan, TaskId};

/// A single-step change to the running state that the coordinator wants a
/// plan ready for before it happens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Perturbation {
    /// Every worker of a healthy node fails.
    NodeFault(NodeId),
    /// A lost or drained node comes back.
    NodeJoin(NodeId),
    /// A fresh node of `workers` workers is added.
    WorkersJoin(u32),
    /// A running task completes and releases its workers.
    TaskFinished(TaskId),
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::NodeFault(n) => write!(f, "fault:{n}"),
            Perturbation::NodeJoin(n) => write!(f, "join:{n}"),
            Perturbation::WorkersJoin(k) => write!(f, "join:+{k}"),
            Perturbation::TaskFinished(t) => write!(f, "finish:{t}"),
        }
    }
}

impl Perturbation {
    /// Planner inputs after this change, given the state before it.
    pub fn apply(&self, cluster: &ClusterState, base: &RewardInputs) -> RewardInputs {
        let mut out = base.clone();
        match self {
            Perturbation::NodeFault(node) => {
                out.capacity = out.capacity.saturating_sub(cluster.healthy_on_node(node));
                for t in cluster.tasks_on_node(node) {
                    if out.index_of(&t).is_some() {
                        out.faulted.insert(t);
                    }
                }
            }
            Perturbation::NodeJoin(node) => {
                out.capacity += cluster.node(node).map_or(0, |n| n.worker_ids.len() as u32);
            }
            Perturbation::WorkersJoin(k) => out.capacity += k,
            Perturbation::TaskFinished(task) => {
                if let Some(i) = out.index_of(task) {
                    out.tasks.remove(i);
                    out.current.remove(i);
                    out.faulted.remove(task);
                }
            }
        }
        out
    }
}

/// Plans precomputed for every single-step perturbation of a state.
#[derive(Debug, Clone, Default)]
pub struct LookupTable {
    entries: BTreeMap<Perturbation, Plan>,
}

impl LookupTable {
    pub fn get(&self, p: &Perturbation) -> Option<&Plan> {
        self.entries.get(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Perturbation, &Plan)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Enumerates the perturbations of `cluster` and solves each one.
///
/// Covered: failure of each healthy node, return of each unhealthy node, one
/// fresh node of `join_size` workers (skipped when zero), and completion of
/// each task in `base`.
pub fn precompute_lookup(cluster: &ClusterState, base: &RewardInputs, join_size: u32) -> LookupTable {
    let mut keys: Vec<Perturbation> = Vec::new();
    for n in &cluster.nodes {
        match n.health {
            Health::Healthy => keys.push(Perturbation::NodeFault(n.node_id.clone())),
            Health::Lost | Health::Drained => keys.push(Perturbation::NodeJoin(n.node_id.clone())),
        }
    }
    if join_size > 0 {
        keys.push(Perturbation::WorkersJoin(join_size));
    }
    keys.extend(base.tasks.iter().map(|t| Perturbation::TaskFinished(t.id.clone())));

    let entries = keys
        .into_par_iter()
        .map(|p| {
            let plan = solve(&p.apply(cluster, base));
            (p, plan)
        })
        .collect();
    LookupTable { entries }
}
