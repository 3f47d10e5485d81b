use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ids::{NodeId, TaskId, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Health {
    Healthy,
    Lost,
    Drained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: NodeId,
    pub worker_ids: Vec<WorkerId>,
    pub health: Health,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub worker_id: WorkerId,
    pub node_id: NodeId,
    pub health: Health,
    pub assigned_task: Option<TaskId>,
}

/// Workers held by one task. `count` is what the task was configured with;
/// a well-formed state has `count == workers.len()`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignment {
    pub count: u32,
    pub workers: BTreeSet<WorkerId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterState {
    pub nodes: Vec<Node>,
    pub workers: Vec<Worker>,
    pub assignment: BTreeMap<TaskId, Assignment>,
}

impl ClusterState {
    /// `nodes` nodes named `n0..`, each with `gpus_per_node` workers named `n<i>-g<j>`.
    pub fn uniform(nodes: usize, gpus_per_node: usize) -> Self {
        let spec: Vec<(NodeId, usize)> = (0..nodes).map(|i| (NodeId::new(format!("n{i}")), gpus_per_node)).collect();
        Self::from_nodes(&spec)
    }

    pub fn from_nodes(spec: &[(NodeId, usize)]) -> Self {
        let mut state = ClusterState::default();
        for (node_id, gpus) in spec {
            let worker_ids: Vec<WorkerId> = (0..*gpus).map(|g| WorkerId::new(format!("{node_id}-g{g}"))).collect();
            for w in &worker_ids {
                state.workers.push(Worker {
                    worker_id: w.clone(),
                    node_id: node_id.clone(),
                    health: Health::Healthy,
                    assigned_task: None,
                });
            }
            state.nodes.push(Node { node_id: node_id.clone(), worker_ids, health: Health::Healthy });
        }
        state
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.node_id == id)
    }

    pub fn worker(&self, id: &WorkerId) -> Option<&Worker> {
        self.workers.iter().find(|w| &w.worker_id == id)
    }

    pub fn healthy_count(&self) -> u32 {
        self.workers.iter().filter(|w| w.health == Health::Healthy).count() as u32
    }

    pub fn assigned_count(&self) -> u32 {
        self.assignment.values().map(|a| a.count).sum()
    }

    /// Healthy workers not held by any task, in declaration order.
    pub fn free_workers(&self) -> Vec<WorkerId> {
        let held: BTreeSet<&WorkerId> = self.assignment.values().flat_map(|a| a.workers.iter()).collect();
        self.workers
            .iter()
            .filter(|w| w.health == Health::Healthy && !held.contains(&w.worker_id))
            .map(|w| w.worker_id.clone())
            .collect()
    }

    /// Tasks holding at least one worker on `node`.
    pub fn tasks_on_node(&self, node: &NodeId) -> BTreeSet<TaskId> {
        let Some(n) = self.node(node) else {
            return BTreeSet::new();
        };
        let on_node: BTreeSet<&WorkerId> = n.worker_ids.iter().collect();
        self.assignment
            .iter()
            .filter(|(_, a)| a.workers.iter().any(|w| on_node.contains(w)))
            .map(|(t, _)| t.clone())
            .collect()
    }

    /// Healthy workers on `node`.
    pub fn healthy_on_node(&self, node: &NodeId) -> u32 {
        self.node(node).map_or(0, |n| {
            n.worker_ids.iter().filter(|w| self.worker(w).is_some_and(|w| w.health == Health::Healthy)).count() as u32
        })
    }

    pub fn set_node_health(&mut self, node: &NodeId, health: Health) -> bool {
        let Some(n) = self.nodes.iter_mut().find(|n| &n.node_id == node) else {
            return false;
        };
        n.health = health;
        for w in self.workers.iter_mut().filter(|w| &w.node_id == node) {
            w.health = health;
        }
        true
    }

    /// Removes every worker of `node` from all assignments.
    pub fn evict_node(&mut self, node: &NodeId) {
        let Some(n) = self.node(node) else { return };
        let ids: BTreeSet<WorkerId> = n.worker_ids.iter().cloned().collect();
        for a in self.assignment.values_mut() {
            a.workers.retain(|w| !ids.contains(w));
            a.count = a.workers.len() as u32;
        }
        for w in self.workers.iter_mut().filter(|w| ids.contains(&w.worker_id)) {
            w.assigned_task = None;
        }
    }

    /// Gives `task` exactly `workers`, replacing what it held before.
    pub fn assign(&mut self, task: &TaskId, workers: BTreeSet<WorkerId>) {
        for w in self.workers.iter_mut() {
            if w.assigned_task.as_ref() == Some(task) {
                w.assigned_task = None;
            }
            if workers.contains(&w.worker_id) {
                w.assigned_task = Some(task.clone());
            }
        }
        if workers.is_empty() {
            self.assignment.remove(task);
        } else {
            self.assignment.insert(task.clone(), Assignment { count: workers.len() as u32, workers });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Capacity { assigned: u32, healthy: u32 },
    DoubleAssignment { worker: WorkerId, tasks: Vec<TaskId> },
    CountMismatch { task: TaskId, count: u32, listed: usize },
    UnknownWorker { task: TaskId, worker: WorkerId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Capacity { assigned, healthy } => {
                write!(f, "capacity violation: {assigned} workers assigned but only {healthy} healthy")
            }
            Violation::DoubleAssignment { worker, tasks } => {
                let names: Vec<&str> = tasks.iter().map(TaskId::as_str).collect();
                write!(f, "double-assignment violation: worker {worker} held by {}", names.join(", "))
            }
            Violation::CountMismatch { task, count, listed } => {
                write!(f, "task {task} has count {count} but lists {listed} workers")
            }
            Violation::UnknownWorker { task, worker } => write!(f, "task {task} holds unknown worker {worker}"),
        }
    }
}

/// Checks the capacity and exclusivity invariants. Violations are data.
pub fn validate_cluster(state: &ClusterState) -> Vec<Violation> {
    let mut out = Vec::new();
    let healthy = state.healthy_count();
    let assigned = state.assigned_count();
    if assigned > healthy {
        out.push(Violation::Capacity { assigned, healthy });
    }

    let known: BTreeSet<&WorkerId> = state.workers.iter().map(|w| &w.worker_id).collect();
    let mut holders: BTreeMap<&WorkerId, Vec<TaskId>> = BTreeMap::new();
    for (task, a) in &state.assignment {
        if a.count as usize != a.workers.len() {
            out.push(Violation::CountMismatch { task: task.clone(), count: a.count, listed: a.workers.len() });
        }
        for w in &a.workers {
            if !known.contains(w) {
                out.push(Violation::UnknownWorker { task: task.clone(), worker: w.clone() });
            }
            holders.entry(w).or_default().push(task.clone());
        }
    }
    for (w, tasks) in holders {
        if tasks.len() > 1 {
            out.push(Violation::DoubleAssignment { worker: w.clone(), tasks });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn take(state: &ClusterState, from: usize, n: usize) -> BTreeSet<WorkerId> {
        state.workers[from..from + n].iter().map(|w| w.worker_id.clone()).collect()
    }

    #[test]
    fn within_capacity_is_clean() {
        let mut s = ClusterState::uniform(1, 8);
        let a = take(&s, 0, 3);
        let b = take(&s, 3, 3);
        s.assign(&"a".into(), a);
        s.assign(&"b".into(), b);
        assert!(validate_cluster(&s).is_empty());
        assert_eq!(s.free_workers().len(), 2);
    }

    #[test]
    fn over_capacity_is_reported() {
        let mut s = ClusterState::uniform(2, 8);
        s.set_node_health(&"n1".into(), Health::Lost);
        let a = take(&s, 0, 5);
        let b = take(&s, 5, 5);
        s.assign(&"a".into(), a);
        s.assign(&"b".into(), b);
        let v = validate_cluster(&s);
        assert_eq!(v, vec![Violation::Capacity { assigned: 10, healthy: 8 }]);
        assert!(v[0].to_string().starts_with("capacity violation"));
    }

    #[test]
    fn double_assignment_is_reported() {
        let mut s = ClusterState::uniform(1, 8);
        let shared = WorkerId::from("n0-g3");
        s.assignment
            .insert("a".into(), Assignment { count: 2, workers: [WorkerId::from("n0-g0"), shared.clone()].into() });
        s.assignment
            .insert("b".into(), Assignment { count: 2, workers: [WorkerId::from("n0-g1"), shared.clone()].into() });
        let v = validate_cluster(&s);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::DoubleAssignment { worker, .. } if *worker == shared));
    }

    #[test]
    fn tasks_on_node_and_evict() {
        let mut s = ClusterState::uniform(2, 8);
        let a = take(&s, 4, 8);
        s.assign(&"a".into(), a);
        assert_eq!(s.tasks_on_node(&"n0".into()).len(), 1);
        assert_eq!(s.tasks_on_node(&"n1".into()).len(), 1);
        s.set_node_health(&"n1".into(), Health::Drained);
        s.evict_node(&"n1".into());
        assert_eq!(s.assignment[&TaskId::from("a")].count, 4);
        assert!(validate_cluster(&s).is_empty());
    }
}
