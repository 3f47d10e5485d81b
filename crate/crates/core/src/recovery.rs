//! Error handling: classify by severity, act, escalate on failure.
//!
//! sev3 failures are retried in place, sev2 failures restart the training
//! process, and sev1 failures isolate the node and ask the planner for a
//! new configuration. A failed reattempt or restart comes back as a new
//! event one level up. Node joins and task launches or completions also
//! produce reconfiguration requests.

use std::collections::BTreeSet;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClusterState, ErrorEvent, Health, NodeId, Severity, Subject, TaskId};

/// One in-place retry after this backoff.
pub const REATTEMPT_BACKOFF_S: f64 = 1.0;
/// Restart attempts before escalating.
pub const RESTART_ATTEMPTS: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum RecoveryError {
    #[error("sev1 recovery failed for {0}: cannot escalate further")]
    ReconfigureFailed(Subject),
    #[error("unknown subject {0}")]
    UnknownSubject(Subject),
    #[error("node {0} is not known to the cluster")]
    UnknownNode(NodeId),
    #[error("node {0} must be healthy before it can join")]
    NodeNotHealthy(NodeId),
    #[error("task {0} is not currently scheduled")]
    NotScheduled(TaskId),
    #[error("task {0} is already running")]
    AlreadyRunning(TaskId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    ReattemptInPlace,
    RestartProcess,
    ReconfigureCluster,
}

impl ActionKind {
    pub fn for_severity(sev: Severity) -> Self {
        match sev {
            Severity::Sev3 => ActionKind::ReattemptInPlace,
            Severity::Sev2 => ActionKind::RestartProcess,
            Severity::Sev1 => ActionKind::ReconfigureCluster,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryAction {
    pub kind: ActionKind,
    pub subject: Subject,
    /// The event this action answers.
    pub event: ErrorEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

/// What caused a reconfiguration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    NodeFault(NodeId),
    NodeJoin(NodeId),
    TaskFinished(TaskId),
    TaskLaunched(TaskId),
}

/// Ask for a fresh plan over all tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigurationRequest {
    pub triggers: Vec<Trigger>,
    /// Healthy workers once the triggers have taken effect.
    pub capacity: u32,
    /// Tasks that lost workers and must pay a transition regardless.
    pub faulted: BTreeSet<TaskId>,
    pub removed: BTreeSet<TaskId>,
    pub added: BTreeSet<TaskId>,
}

impl ReconfigurationRequest {
    fn single(trigger: Trigger, capacity: u32) -> Self {
        Self {
            triggers: vec![trigger],
            capacity,
            faulted: BTreeSet::new(),
            removed: BTreeSet::new(),
            added: BTreeSet::new(),
        }
    }

    /// Folds a later request into this one so a batch of simultaneous
    /// triggers costs a single planner call.
    pub fn merge(&mut self, later: ReconfigurationRequest) {
        self.triggers.extend(later.triggers);
        self.capacity = later.capacity;
        self.faulted.extend(later.faulted);
        self.removed.extend(later.removed);
        self.added.extend(later.added);
    }
}

/// One failed action and the event it escalated to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationRecord {
    pub original: ErrorEvent,
    pub attempted: ActionKind,
    pub outcome: Outcome,
    pub escalated_to: Severity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyOutcome {
    pub state: ClusterState,
    pub escalation: Option<ErrorEvent>,
    pub record: Option<EscalationRecord>,
    pub reconfiguration: Option<ReconfigurationRequest>,
}

/// Severity-mapped action for `event`.
pub fn decide(event: &ErrorEvent) -> RecoveryAction {
    RecoveryAction {
        kind: ActionKind::for_severity(event.severity),
        subject: event.subject.clone(),
        event: event.clone(),
    }
}

/// Node that hosts the subject of an event.
pub fn subject_node(state: &ClusterState, subject: &Subject) -> Result<NodeId, RecoveryError> {
    match subject {
        Subject::Node(n) => {
            state.node(n).map(|n| n.node_id.clone()).ok_or_else(|| RecoveryError::UnknownSubject(subject.clone()))
        }
        Subject::Worker(w) => {
            state.worker(w).map(|w| w.node_id.clone()).ok_or_else(|| RecoveryError::UnknownSubject(subject.clone()))
        }
    }
}

/// Tasks touched by the subject of an event.
pub fn subject_tasks(state: &ClusterState, subject: &Subject) -> BTreeSet<TaskId> {
    match subject {
        Subject::Node(n) => state.tasks_on_node(n),
        Subject::Worker(w) => state.worker(w).and_then(|w| w.assigned_task.clone()).into_iter().collect(),
    }
}

/// Carries out `action` given whether the attempt worked.
pub fn apply(action: &RecoveryAction, state: &ClusterState, outcome: Outcome) -> Result<ApplyOutcome, RecoveryError> {
    let node = subject_node(state, &action.subject)?;
    match (action.kind, outcome) {
        (ActionKind::ReattemptInPlace | ActionKind::RestartProcess, Outcome::Success) => {
            Ok(ApplyOutcome { state: state.clone(), escalation: None, record: None, reconfiguration: None })
        }
        (ActionKind::ReattemptInPlace | ActionKind::RestartProcess, Outcome::Failure) => {
            let up = action
                .event
                .severity
                .escalate()
                .ok_or_else(|| RecoveryError::ReconfigureFailed(action.subject.clone()))?;
            let escalated =
                ErrorEvent { severity: up, escalated_from: Some(action.event.severity), ..action.event.clone() };
            Ok(ApplyOutcome {
                state: state.clone(),
                escalation: Some(escalated),
                record: Some(EscalationRecord {
                    original: action.event.clone(),
                    attempted: action.kind,
                    outcome,
                    escalated_to: up,
                }),
                reconfiguration: None,
            })
        }
        (ActionKind::ReconfigureCluster, Outcome::Success) => {
            let faulted = state.tasks_on_node(&node);
            let mut next = state.clone();
            next.set_node_health(&node, Health::Drained);
            next.evict_node(&node);
            let mut req = ReconfigurationRequest::single(Trigger::NodeFault(node), next.healthy_count());
            req.faulted = faulted;
            Ok(ApplyOutcome { state: next, escalation: None, record: None, reconfiguration: Some(req) })
        }
        (ActionKind::ReconfigureCluster, Outcome::Failure) => {
            Err(RecoveryError::ReconfigureFailed(action.subject.clone()))
        }
    }
}

/// Reconfiguration request for a non-failure trigger.
pub fn on_trigger(trigger: &Trigger, state: &ClusterState) -> Result<ReconfigurationRequest, RecoveryError> {
    let mut req = ReconfigurationRequest::single(trigger.clone(), state.healthy_count());
    match trigger {
        Trigger::NodeJoin(node) | Trigger::NodeFault(node) => {
            let n = state.node(node).ok_or_else(|| RecoveryError::UnknownNode(node.clone()))?;
            if matches!(trigger, Trigger::NodeJoin(_)) && n.health != Health::Healthy {
                return Err(RecoveryError::NodeNotHealthy(node.clone()));
            }
            if matches!(trigger, Trigger::NodeFault(_)) {
                req.faulted = state.tasks_on_node(node);
            }
        }
        Trigger::TaskFinished(task) => {
            if !state.assignment.contains_key(task) {
                return Err(RecoveryError::NotScheduled(task.clone()));
            }
            req.removed.insert(task.clone());
        }
        Trigger::TaskLaunched(task) => {
            if state.assignment.contains_key(task) {
                return Err(RecoveryError::AlreadyRunning(task.clone()));
            }
            req.added.insert(task.clone());
        }
    }
    Ok(req)
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub t: f64,
    pub event: ErrorEvent,
    pub action: ActionKind,
    pub outcome: Outcome,
}

/// Appends (event, action, outcome) tuples as JSON lines.
#[derive(Debug)]
pub struct AuditLog<W: io::Write> {
    out: W,
}

impl<W: io::Write> AuditLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(&mut self, t: f64, action: &RecoveryAction, outcome: Outcome) -> io::Result<()> {
        let entry = AuditEntry { t, event: action.event.clone(), action: action.kind, outcome };
        serde_json::to_writer(&mut self.out, &entry)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Runs the full escalation chain for one event with scripted outcomes,
/// one per attempted action. Missing outcomes count as success.
pub fn resolve(
    event: &ErrorEvent,
    state: &ClusterState,
    outcomes: &[Outcome],
) -> Result<(ClusterState, Vec<EscalationRecord>, Option<ReconfigurationRequest>), RecoveryError> {
    let mut current = event.clone();
    let mut records = Vec::new();
    let mut step = 0;
    loop {
        let action = decide(&current);
        let outcome = outcomes.get(step).copied().unwrap_or(Outcome::Success);
        step += 1;
        let res = apply(&action, state, outcome)?;
        records.extend(res.record);
        match res.escalation {
            Some(next) => current = next,
            None => return Ok((res.state, records, res.reconfiguration)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DetectionSource, StatusKind, WorkerId};

    fn state() -> ClusterState {
        let mut s = ClusterState::uniform(2, 4);
        let a: BTreeSet<WorkerId> = s.workers[0..6].iter().map(|w| w.worker_id.clone()).collect();
        s.assign(&"a".into(), a);
        s
    }

    fn ev(kind: StatusKind, source: DetectionSource) -> ErrorEvent {
        ErrorEvent::new(10.0, source, kind, Subject::Worker("n1-g0".into()))
    }

    #[test]
    fn decide_examples() {
        let e = ev(StatusKind::ConnectionRefused, DetectionSource::ExceptionPropagation);
        assert_eq!(decide(&e).kind, ActionKind::ReattemptInPlace);
        let e = ev(StatusKind::CudaErrors, DetectionSource::ExceptionPropagation);
        assert_eq!(decide(&e).kind, ActionKind::RestartProcess);
        let e = ev(StatusKind::EccErrors, DetectionSource::ExceptionPropagation);
        assert_eq!(decide(&e).kind, ActionKind::ReconfigureCluster);
    }

    #[test]
    fn success_keeps_assignment() {
        let s = state();
        for kind in [StatusKind::ConnectionRefused, StatusKind::CudaErrors] {
            let a = decide(&ev(kind, DetectionSource::ExceptionPropagation));
            let out = apply(&a, &s, Outcome::Success).unwrap();
            assert_eq!(out.state, s);
            assert!(out.escalation.is_none());
        }
    }

    #[test]
    fn failures_escalate_one_level() {
        let s = state();
        let a = decide(&ev(StatusKind::ConnectionRefused, DetectionSource::ExceptionPropagation));
        let up = apply(&a, &s, Outcome::Failure).unwrap().escalation.unwrap();
        assert_eq!(up.severity, Severity::Sev2);
        assert_eq!(up.escalated_from, Some(Severity::Sev3));
        let up2 = apply(&decide(&up), &s, Outcome::Failure).unwrap().escalation.unwrap();
        assert_eq!(up2.severity, Severity::Sev1);
    }

    #[test]
    fn reconfigure_drains_node() {
        let s = state();
        let a = decide(&ev(StatusKind::EccErrors, DetectionSource::ExceptionPropagation));
        let out = apply(&a, &s, Outcome::Success).unwrap();
        assert_eq!(out.state.node(&"n1".into()).unwrap().health, Health::Drained);
        assert_eq!(out.state.healthy_count(), 4);
        let req = out.reconfiguration.unwrap();
        assert_eq!(req.capacity, 4);
        assert!(req.faulted.contains(&TaskId::from("a")));
        assert!(apply(&a, &s, Outcome::Failure).is_err());
    }

    #[test]
    fn chain_terminates() {
        let s = state();
        let e = ev(StatusKind::NcclTimeout, DetectionSource::StatisticalMonitoring);
        let (next, records, req) = resolve(&e, &s, &[Outcome::Failure, Outcome::Failure]).unwrap();
        assert_eq!(records.len(), 2);
        assert!(req.is_some());
        assert_eq!(next.healthy_count(), 4);
        assert!(resolve(&e, &s, &[Outcome::Failure; 3]).is_err());
    }

    #[test]
    fn triggers() {
        let mut s = state();
        assert!(on_trigger(&Trigger::TaskFinished("b".into()), &s).is_err());
        let r = on_trigger(&Trigger::TaskFinished("a".into()), &s).unwrap();
        assert!(r.removed.contains(&TaskId::from("a")));
        assert!(on_trigger(&Trigger::TaskLaunched("a".into()), &s).is_err());
        s.set_node_health(&"n1".into(), Health::Lost);
        assert!(on_trigger(&Trigger::NodeJoin("n1".into()), &s).is_err());
        s.set_node_health(&"n1".into(), Health::Healthy);
        assert_eq!(on_trigger(&Trigger::NodeJoin("n1".into()), &s).unwrap().capacity, 8);
        assert!(on_trigger(&Trigger::NodeJoin("zz".into()), &s).is_err());
    }

    #[test]
    fn merge_coalesces() {
        let s = state();
        let mut a = on_trigger(&Trigger::NodeFault("n0".into()), &s).unwrap();
        let b = on_trigger(&Trigger::NodeFault("n1".into()), &s).unwrap();
        a.merge(b);
        assert_eq!(a.triggers.len(), 2);
        assert_eq!(a.faulted.len(), 1);
    }

    #[test]
    fn audit_schema() {
        let mut log = AuditLog::new(Vec::new());
        let a = decide(&ev(StatusKind::CudaErrors, DetectionSource::ExceptionPropagation));
        log.record(12.5, &a, Outcome::Success).unwrap();
        let line = String::from_utf8(log.into_inner()).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        for key in ["t", "event", "action", "outcome"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["action"], "restart_process");
    }
}
