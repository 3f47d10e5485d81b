//! In-band failure detection.
//!
//! Four independent monitors feed [`ErrorEvent`]s to the coordinator:
//! node heartbeats, process supervision, exception propagation and online
//! statistical monitoring of iteration completion times. [`Monitor`] is the
//! single consumer that applies observations in timestamp order.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::domain::{
    DetectionConfig, DetectionSource, ErrorEvent, NodeId, Severity, StatusKind, Subject, TaskId, WorkerId,
};

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("node {0} is not registered with the heartbeat registry")]
    UnknownNode(NodeId),
    #[error("no iteration of task {0} has completed yet")]
    NoIterations(TaskId),
    #[error("heartbeat timeout {timeout}s must exceed the period {period}s")]
    BadTimeout { period: f64, timeout: f64 },
    #[error("iteration duration must be positive (got {0})")]
    BadDuration(f64),
}

/// Last heartbeat seen from every node agent.
#[derive(Debug, Clone)]
pub struct HeartbeatRegistry {
    period: f64,
    timeout: f64,
    last: BTreeMap<NodeId, f64>,
}

impl HeartbeatRegistry {
    pub fn new(period: f64, timeout: f64) -> Result<Self, DetectionError> {
        if timeout <= period {
            return Err(DetectionError::BadTimeout { period, timeout });
        }
        Ok(Self { period, timeout, last: BTreeMap::new() })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn timeout(&self) -> f64 {
        self.timeout
    }

    pub fn register(&mut self, node: NodeId, now: f64) {
        self.last.insert(node, now);
    }

    pub fn deregister(&mut self, node: &NodeId) {
        self.last.remove(node);
    }

    pub fn beat(&mut self, node: &NodeId, now: f64) -> Result<(), DetectionError> {
        let slot = self.last.get_mut(node).ok_or_else(|| DetectionError::UnknownNode(node.clone()))?;
        *slot = slot.max(now);
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.last.keys()
    }
}

/// Emits a sev1 "Lost connection" event once the node has been silent for
/// longer than the timeout.
pub fn check_heartbeat(reg: &HeartbeatRegistry, node: &NodeId, now: f64) -> Result<Option<ErrorEvent>, DetectionError> {
    let last = *reg.last.get(node).ok_or_else(|| DetectionError::UnknownNode(node.clone()))?;
    if now - last > reg.timeout {
        Ok(Some(ErrorEvent::new(
            now,
            DetectionSource::NodeHealth,
            StatusKind::LostConnection,
            Subject::Node(node.clone()),
        )))
    } else {
        Ok(None)
    }
}

/// Replays a node agent dying at `fail_time`: beats every `period` up to the
/// failure, coordinator checks every `check_period`. Returns the time the
/// loss is reported.
pub fn simulate_node_loss(period: f64, timeout: f64, check_period: f64, fail_time: f64) -> Result<f64, DetectionError> {
    let mut reg = HeartbeatRegistry::new(period, timeout)?;
    let node = NodeId::from("probe");
    reg.register(node.clone(), 0.0);
    let last_beat = (fail_time / period).floor() * period;
    reg.beat(&node, last_beat)?;
    let mut tick = (fail_time / check_period).floor() * check_period;
    loop {
        if tick >= fail_time {
            if let Some(ev) = check_heartbeat(&reg, &node, tick)? {
                return Ok(ev.time);
            }
        }
        tick += check_period;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitObservation {
    Running,
    Exited { code: i32 },
    Signaled { signal: i32 },
}

/// Process supervision: any non-clean exit is a sev2 failure.
pub fn supervise_process(worker: &WorkerId, exit: ExitObservation, now: f64) -> Option<ErrorEvent> {
    match exit {
        ExitObservation::Running | ExitObservation::Exited { code: 0 } => None,
        ExitObservation::Exited { .. } | ExitObservation::Signaled { .. } => Some(ErrorEvent::new(
            now,
            DetectionSource::ProcessSupervision,
            StatusKind::ExitedAbnormally,
            Subject::Worker(worker.clone()),
        )),
    }
}

/// Time at which a supervisor polling every `period` notices an exit at `exit_time`.
pub fn supervision_detection_time(period: f64, exit_time: f64) -> f64 {
    let polls = (exit_time / period).ceil();
    let t = polls * period;
    if t < exit_time {
        t + period
    } else {
        t
    }
}

/// Severity of a status raised through exception propagation.
pub fn classify_exception(kind: StatusKind) -> Severity {
    kind.severity()
}

/// Maps a raw exception label to its status; labels outside the table are
/// treated conservatively as "Other software errors" (sev2).
pub fn classify_exception_label(label: &str) -> (StatusKind, Severity) {
    match StatusKind::from_label(label) {
        Some(k) if k.reported_by(DetectionSource::ExceptionPropagation) => (k, k.severity()),
        _ => (StatusKind::OtherSoftwareErrors, Severity::Sev2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum IterationHealth {
    Normal,
    Degraded,
    Failed,
}

#[derive(Debug, Clone, Default)]
struct TaskWindow {
    durations: VecDeque<f64>,
    last_completion: f64,
}

impl TaskWindow {
    fn mean(&self) -> Option<f64> {
        if self.durations.is_empty() {
            None
        } else {
            Some(self.durations.iter().sum::<f64>() / self.durations.len() as f64)
        }
    }
}

/// Rolling iteration-time statistics per task.
#[derive(Debug, Clone)]
pub struct IterationStats {
    window: usize,
    degraded_factor: f64,
    failed_factor: f64,
    tasks: BTreeMap<TaskId, TaskWindow>,
}

impl IterationStats {
    pub fn new(window: usize, degraded_factor: f64, failed_factor: f64) -> Self {
        Self { window: window.max(1), degraded_factor, failed_factor, tasks: BTreeMap::new() }
    }

    pub fn from_config(cfg: &DetectionConfig) -> Self {
        Self::new(cfg.window, cfg.degraded_factor, cfg.failed_factor)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn mean(&self, task: &TaskId) -> Option<f64> {
        self.tasks.get(task).and_then(TaskWindow::mean)
    }

    pub fn last_completion(&self, task: &TaskId) -> Option<f64> {
        self.tasks.get(task).filter(|w| !w.durations.is_empty()).map(|w| w.last_completion)
    }

    /// Records one completed iteration of `duration` seconds ending at `completed_at`.
    pub fn observe_iteration(&mut self, task: &TaskId, duration: f64, completed_at: f64) -> Result<(), DetectionError> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(DetectionError::BadDuration(duration));
        }
        let w = self.tasks.entry(task.clone()).or_default();
        w.durations.push_back(duration);
        if w.durations.len() > self.window {
            w.durations.pop_front();
        }
        w.last_completion = completed_at;
        Ok(())
    }

    /// Forgets a task's history; iteration time depends on the configuration.
    pub fn reset(&mut self, task: &TaskId) {
        self.tasks.remove(task);
    }

    pub fn statistical_check(&self, task: &TaskId, now: f64) -> Result<IterationHealth, DetectionError> {
        let w = self.tasks.get(task).ok_or_else(|| DetectionError::NoIterations(task.clone()))?;
        let mean = w.mean().ok_or_else(|| DetectionError::NoIterations(task.clone()))?;
        let elapsed = now - w.last_completion;
        Ok(if elapsed > self.failed_factor * mean {
            IterationHealth::Failed
        } else if elapsed > self.degraded_factor * mean {
            IterationHealth::Degraded
        } else {
            IterationHealth::Normal
        })
    }

    /// Event for a failed check. A pending network condition is reported as
    /// an NCCL timeout first so the cheaper in-place retry gets a chance.
    pub fn statistical_event(
        &self,
        task: &TaskId,
        subject: Subject,
        now: f64,
        network_suspect: bool,
    ) -> Result<Option<ErrorEvent>, DetectionError> {
        if self.statistical_check(task, now)? != IterationHealth::Failed {
            return Ok(None);
        }
        let kind = if network_suspect { StatusKind::NcclTimeout } else { StatusKind::TaskHang };
        Ok(Some(ErrorEvent::new(now, DetectionSource::StatisticalMonitoring, kind, subject)))
    }

    /// First check tick (multiples of `check_period`) at which a task that
    /// stopped making progress is declared failed.
    pub fn failure_detection_time(&self, task: &TaskId, check_period: f64) -> Result<f64, DetectionError> {
        let w = self.tasks.get(task).ok_or_else(|| DetectionError::NoIterations(task.clone()))?;
        let mean = w.mean().ok_or_else(|| DetectionError::NoIterations(task.clone()))?;
        let threshold = w.last_completion + self.failed_factor * mean;
        let mut t = ((threshold / check_period).floor() + 1.0) * check_period;
        while self.statistical_check(task, t)? != IterationHealth::Failed {
            t += check_period;
        }
        Ok(t)
    }
}

/// Raw observation produced by one of the monitors.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Heartbeat { node: NodeId, time: f64 },
    ProcessExit { worker: WorkerId, exit: ExitObservation, time: f64 },
    Exception { worker: WorkerId, label: String, time: f64 },
    IterationDone { task: TaskId, duration: f64, time: f64 },
}

impl Observation {
    pub fn time(&self) -> f64 {
        match self {
            Observation::Heartbeat { time, .. }
            | Observation::ProcessExit { time, .. }
            | Observation::Exception { time, .. }
            | Observation::IterationDone { time, .. } => *time,
        }
    }
}

/// Coordinator-side consumer of every monitor's observations.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub heartbeats: HeartbeatRegistry,
    pub iterations: IterationStats,
    cfg: DetectionConfig,
    task_subjects: BTreeMap<TaskId, Subject>,
}

impl Monitor {
    pub fn new(cfg: &DetectionConfig) -> Result<Self, DetectionError> {
        Ok(Self {
            heartbeats: HeartbeatRegistry::new(cfg.heartbeat_period_s, cfg.heartbeat_timeout_s)?,
            iterations: IterationStats::from_config(cfg),
            cfg: *cfg,
            task_subjects: BTreeMap::new(),
        })
    }

    /// Subject reported when `task` hangs (typically its first worker).
    pub fn watch_task(&mut self, task: TaskId, subject: Subject) {
        self.task_subjects.insert(task, subject);
    }

    /// Applies a batch of observations in timestamp order and returns the
    /// events they raise, in processing order.
    pub fn ingest(&mut self, mut batch: Vec<Observation>) -> Result<Vec<ErrorEvent>, DetectionError> {
        batch.sort_by(|a, b| a.time().total_cmp(&b.time()));
        let mut events = Vec::new();
        for obs in batch {
            match obs {
                Observation::Heartbeat { node, time } => self.heartbeats.beat(&node, time)?,
                Observation::ProcessExit { worker, exit, time } => {
                    events.extend(supervise_process(&worker, exit, time));
                }
                Observation::Exception { worker, label, time } => {
                    let (kind, _) = classify_exception_label(&label);
                    events.push(ErrorEvent::new(
                        time,
                        DetectionSource::ExceptionPropagation,
                        kind,
                        Subject::Worker(worker),
                    ));
                }
                Observation::IterationDone { task, duration, time } => {
                    self.iterations.observe_iteration(&task, duration, time)?;
                }
            }
        }
        events.sort_by(ErrorEvent::processing_order);
        Ok(events)
    }

    /// Periodic check of heartbeats and iteration progress.
    pub fn poll(&self, now: f64) -> Result<Vec<ErrorEvent>, DetectionError> {
        let mut events = Vec::new();
        for node in self.heartbeats.nodes() {
            events.extend(check_heartbeat(&self.heartbeats, node, now)?);
        }
        for (task, subject) in &self.task_subjects {
            if self.iterations.last_completion(task).is_none() {
                continue;
            }
            events.extend(self.iterations.statistical_event(task, subject.clone(), now, false)?);
        }
        events.sort_by(ErrorEvent::processing_order);
        Ok(events)
    }

    pub fn config(&self) -> &DetectionConfig {
        &self.cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node() -> NodeId {
        NodeId::from("n0")
    }

    #[test]
    fn heartbeat_within_threshold() {
        let mut reg = HeartbeatRegistry::new(1.0, 5.0).unwrap();
        reg.register(node(), 100.0);
        assert_eq!(check_heartbeat(&reg, &node(), 104.0).unwrap(), None);
        assert_eq!(check_heartbeat(&reg, &node(), 105.0).unwrap(), None);
    }

    #[test]
    fn heartbeat_timeout_is_sev1() {
        let mut reg = HeartbeatRegistry::new(1.0, 5.0).unwrap();
        reg.register(node(), 100.0);
        let ev = check_heartbeat(&reg, &node(), 106.0).unwrap().unwrap();
        assert_eq!(ev.severity, Severity::Sev1);
        assert_eq!(ev.status_kind, StatusKind::LostConnection);
        assert_eq!(ev.source, DetectionSource::NodeHealth);
    }

    #[test]
    fn heartbeat_unknown_node() {
        let reg = HeartbeatRegistry::new(1.0, 5.0).unwrap();
        assert_eq!(check_heartbeat(&reg, &node(), 1.0), Err(DetectionError::UnknownNode(node())));
        assert!(HeartbeatRegistry::new(5.0, 5.0).is_err());
    }

    #[test]
    fn end_to_end_node_loss_latency() {
        // Failure instants spread uniformly over many heartbeat periods.
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|i| {
                let fail = 1000.0 + (i as f64 + 0.5) / n as f64 * 50.0;
                simulate_node_loss(1.0, 5.0, 1.0, fail).unwrap() - fail
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 5.6).abs() < 0.15, "mean latency {mean}");
    }

    #[test]
    fn process_supervision() {
        let w = WorkerId::from("n0-g1");
        assert_eq!(supervise_process(&w, ExitObservation::Running, 1.0), None);
        assert_eq!(supervise_process(&w, ExitObservation::Exited { code: 0 }, 1.0), None);
        let ev = supervise_process(&w, ExitObservation::Exited { code: 139 }, 1.0).unwrap();
        assert_eq!(ev.severity, Severity::Sev2);
        assert_eq!(ev.status_kind, StatusKind::ExitedAbnormally);
        assert!(supervise_process(&w, ExitObservation::Signaled { signal: 9 }, 1.0).is_some());
    }

    #[test]
    fn supervision_latency_bounded() {
        for i in 0..1000 {
            let exit = 17.0 + i as f64 * 0.0137;
            let lat = supervision_detection_time(1.0, exit) - exit;
            assert!((0.0..=1.8).contains(&lat), "{lat}");
        }
    }

    #[test]
    fn exception_classification() {
        assert_eq!(classify_exception(StatusKind::EccErrors), Severity::Sev1);
        assert_eq!(classify_exception(StatusKind::CudaErrors), Severity::Sev2);
        assert_eq!(classify_exception(StatusKind::ConnectionRefused), Severity::Sev3);
        assert_eq!(classify_exception_label("NVLink errors"), (StatusKind::NvlinkErrors, Severity::Sev1));
        assert_eq!(
            classify_exception_label("segfault in allocator"),
            (StatusKind::OtherSoftwareErrors, Severity::Sev2)
        );
        // Statistical-only labels are not exception statuses.
        assert_eq!(classify_exception_label("Task hang").0, StatusKind::OtherSoftwareErrors);
    }

    #[test]
    fn rolling_mean() {
        let t = TaskId::from("a");
        let mut s = IterationStats::new(4, 1.1, 3.0);
        s.observe_iteration(&t, 10.0, 10.0).unwrap();
        assert_eq!(s.mean(&t), Some(10.0));
        s.observe_iteration(&t, 10.0, 20.0).unwrap();
        s.observe_iteration(&t, 10.0, 30.0).unwrap();
        s.observe_iteration(&t, 10.0, 40.0).unwrap();
        assert_eq!(s.mean(&t), Some(10.0));

        let vals = [3.0, 7.0, 11.0, 2.5, 9.25, 4.0];
        let mut s = IterationStats::new(4, 1.1, 3.0);
        let mut now = 0.0;
        for v in vals {
            now += v;
            s.observe_iteration(&t, v, now).unwrap();
        }
        let expect = vals[vals.len() - 4..].iter().sum::<f64>() / 4.0;
        assert_eq!(s.mean(&t), Some(expect));
        assert!(s.observe_iteration(&t, 0.0, now).is_err());
    }

    #[test]
    fn threshold_classification() {
        let t = TaskId::from("a");
        let mut s = IterationStats::new(16, 1.1, 3.0);
        assert_eq!(s.statistical_check(&t, 1.0), Err(DetectionError::NoIterations(t.clone())));
        s.observe_iteration(&t, 60.0, 1000.0).unwrap();
        assert_eq!(s.statistical_check(&t, 1050.0).unwrap(), IterationHealth::Normal);
        assert_eq!(s.statistical_check(&t, 1070.0).unwrap(), IterationHealth::Degraded);
        assert_eq!(s.statistical_check(&t, 1180.0).unwrap(), IterationHealth::Degraded);
        assert_eq!(s.statistical_check(&t, 1181.0).unwrap(), IterationHealth::Failed);
    }

    #[test]
    fn hang_event_kind() {
        let t = TaskId::from("a");
        let mut s = IterationStats::new(16, 1.1, 3.0);
        s.observe_iteration(&t, 60.0, 0.0).unwrap();
        let subj = Subject::Worker("n0-g0".into());
        assert_eq!(s.statistical_event(&t, subj.clone(), 100.0, false).unwrap(), None);
        let hang = s.statistical_event(&t, subj.clone(), 200.0, false).unwrap().unwrap();
        assert_eq!((hang.status_kind, hang.severity), (StatusKind::TaskHang, Severity::Sev2));
        let net = s.statistical_event(&t, subj, 200.0, true).unwrap().unwrap();
        assert_eq!((net.status_kind, net.severity), (StatusKind::NcclTimeout, Severity::Sev3));
    }

    #[test]
    fn statistical_latency_at_most_three_iterations() {
        let t = TaskId::from("a");
        let mut s = IterationStats::new(16, 1.1, 3.0);
        s.observe_iteration(&t, 40.0, 400.0).unwrap();
        let detected = s.failure_detection_time(&t, 1.0).unwrap();
        assert!(detected > 520.0 && detected <= 521.0, "{detected}");
        s.reset(&t);
        assert!(s.failure_detection_time(&t, 1.0).is_err());
    }

    #[test]
    fn monitor_orders_and_classifies() {
        let cfg = DetectionConfig::default();
        let mut m = Monitor::new(&cfg).unwrap();
        m.heartbeats.register(node(), 0.0);
        m.watch_task("a".into(), Subject::Worker("n0-g0".into()));
        let events = m
            .ingest(vec![
                Observation::Exception { worker: "n0-g2".into(), label: "Connection refused/reset".into(), time: 3.0 },
                Observation::IterationDone { task: "a".into(), duration: 10.0, time: 2.0 },
                Observation::ProcessExit {
                    worker: "n0-g1".into(),
                    exit: ExitObservation::Exited { code: 1 },
                    time: 4.0,
                },
                Observation::Exception { worker: "n0-g3".into(), label: "ECC errors".into(), time: 5.0 },
            ])
            .unwrap();
        let sevs: Vec<_> = events.iter().map(|e| e.severity).collect();
        assert_eq!(sevs, vec![Severity::Sev1, Severity::Sev2, Severity::Sev3]);
        let polled = m.poll(40.0).unwrap();
        assert_eq!(polled.len(), 2);
        assert_eq!(polled[0].status_kind, StatusKind::LostConnection);
        assert_eq!(polled[1].status_kind, StatusKind::TaskHang);
    }
}
