//! Discrete-event execution of one policy against one failure trace.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::metrics::{MetricsSeries, Sample, SimSummary};
use super::policy::{static_allocation, Policy};
use super::trace::{FailureTrace, TraceKind};
use crate::detection::{DetectionError, IterationStats};
use crate::domain::{
    validate_cluster, ClusterState, CostParams, DetectionConfig, DetectionSource, Health, NodeId, RunConfig, Severity,
    SimCosts, Subject, TaskSpec, WorkerId,
};
use crate::planner::{precompute_lookup, solve, waf, LookupTable, Perturbation, RewardInputs};
use crate::transition::{plan_migration, recomputation_cost, MigrationError, MigrationRequest, RecomputePolicy};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace event at t={t}: unknown subject {subject:?}")]
    UnknownSubject { t: f64, subject: String },
    #[error("comparison needs at least two policies")]
    TooFewPolicies,
    #[error(transparent)]
    Migration(#[from] MigrationError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
}

/// Static inputs shared by every policy run on a workload.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub tasks: Vec<TaskSpec>,
    pub cluster: ClusterState,
    pub cost: CostParams,
    pub detection: DetectionConfig,
    pub costs: SimCosts,
}

impl SimSetup {
    pub fn from_config(cfg: &RunConfig, tasks: Vec<TaskSpec>) -> Self {
        Self { tasks, cluster: cfg.cluster(), cost: cfg.cost_params, detection: cfg.detection, costs: cfg.sim }
    }

    /// Free transitions: no planner penalty, migration, restart or recomputation time.
    /// Detection latency and success probabilities are kept.
    pub fn zero_cost(mut self) -> Self {
        self.cost.d_transition = 0.0;
        let keep = self.costs;
        self.costs = SimCosts {
            reattempt_success: keep.reattempt_success,
            restart_success: keep.restart_success,
            escalated_repair_s: keep.escalated_repair_s,
            hot_spare_nodes: keep.hot_spare_nodes,
            ..SimCosts::zero()
        };
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Extra sampling cadence between events, seconds. `None` or a
    /// non-positive value samples at events only.
    pub sample_every: Option<f64>,
    /// Keep the sample series; the accumulated total is exact either way.
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { sample_every: Some(60.0), record: true }
    }
}

impl SimOptions {
    fn step(&self) -> Option<f64> {
        self.sample_every.filter(|s| *s > 0.0)
    }

    /// Totals only, for batch comparisons.
    pub fn totals() -> Self {
        Self { sample_every: None, record: false }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: MetricsSeries,
    pub summary: SimSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Running,
    /// Stopped by a failure nobody has detected yet.
    Hung,
    Transition,
    /// Restart-style task waiting for enough healthy workers.
    Waiting,
    Idle,
}

#[derive(Debug, Clone)]
struct TaskRun {
    x: u32,
    /// Initial allocation; affected-only recovery tries to return to it.
    target: u32,
    /// Rank-major worker list. Lost workers stay listed until replaced.
    workers: Vec<WorkerId>,
    lost: BTreeSet<WorkerId>,
    phase: Phase,
    /// Bumped on every phase change so stale events can be recognized.
    token: u64,
    run_since: f64,
    fault_time: Option<f64>,
    downtime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DownCause {
    Trace,
    Escalated,
}

#[derive(Debug, Clone)]
enum EvKind {
    Trace(usize),
    Repair { node: NodeId, cause: DownCause },
    Detected { sev: Severity, subject: Subject, task: Option<(usize, u64)> },
    Resume { task: usize, token: u64 },
    Replan,
}

impl EvKind {
    fn class(&self) -> u8 {
        match self {
            EvKind::Trace(_) => 0,
            EvKind::Repair { .. } => 1,
            EvKind::Detected { .. } => 2,
            EvKind::Resume { .. } => 3,
            EvKind::Replan => 4,
        }
    }
}

#[derive(Debug)]
struct Queued {
    t: f64,
    class: u8,
    seq: u64,
    kind: EvKind,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.class.cmp(&self.class)).then(other.seq.cmp(&self.seq))
    }
}

struct LookupCache {
    cluster: ClusterState,
    base: RewardInputs,
    table: LookupTable,
}

struct Sim<'a> {
    setup: &'a SimSetup,
    trace: &'a FailureTrace,
    policy: Policy,
    opts: SimOptions,
    cluster: ClusterState,
    runs: Vec<TaskRun>,
    queue: BinaryHeap<Queued>,
    seq: u64,
    now: f64,
    acc: f64,
    next_tick: f64,
    rng: ChaCha8Rng,
    /// Nodes that are physically dead, whether or not anyone noticed.
    down: BTreeMap<NodeId, DownCause>,
    /// Repairs that arrived before the fault was detected.
    deferred: BTreeSet<NodeId>,
    pending_faulted: BTreeSet<usize>,
    pending_triggers: Vec<Perturbation>,
    replan_queued: bool,
    lookup: Option<LookupCache>,
    /// FIFO of tasks below their target (affected-only) or waiting to restart.
    waiters: VecDeque<usize>,
    series: MetricsSeries,
    summary: SimSummary,
}

/// Runs `policy` over `trace` and returns the WAF series and totals.
pub fn run_simulation(
    setup: &SimSetup,
    trace: &FailureTrace,
    policy: Policy,
    opts: &SimOptions,
) -> Result<SimOutput, SimError> {
    let mut sim = Sim::new(setup, trace, policy, *opts)?;
    sim.run()?;
    Ok(sim.finish())
}

fn kind_name(kind: TraceKind) -> &'static str {
    match kind {
        TraceKind::Sev1NodeFault => "sev1_node_fault",
        TraceKind::Sev2Error => "sev2_error",
        TraceKind::Sev3Error => "sev3_error",
        TraceKind::NodeRepair => "node_repair",
    }
}

impl<'a> Sim<'a> {
    fn new(setup: &'a SimSetup, trace: &'a FailureTrace, policy: Policy, opts: SimOptions) -> Result<Self, SimError> {
        let base_capacity = setup.cluster.healthy_count();
        let mut spec: Vec<(NodeId, usize)> =
            setup.cluster.nodes.iter().map(|n| (n.node_id.clone(), n.worker_ids.len())).collect();
        let spare_size = spec.first().map_or(8, |s| s.1);
        for k in 0..policy.spare_nodes(setup.costs.hot_spare_nodes) {
            spec.push((NodeId::new(format!("spare{k}")), spare_size));
        }
        let cluster = ClusterState::from_nodes(&spec);

        let alloc = match static_allocation(policy, &setup.tasks, base_capacity) {
            Some(a) => a,
            None => solve(&RewardInputs::new(setup.tasks.clone(), base_capacity, setup.cost)).assignment(),
        };

        let mut sim = Self {
            setup,
            trace,
            policy,
            opts,
            cluster,
            runs: Vec::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            acc: 0.0,
            next_tick: opts.step().unwrap_or(f64::INFINITY),
            rng: ChaCha8Rng::seed_from_u64(trace.seed),
            down: BTreeMap::new(),
            deferred: BTreeSet::new(),
            pending_faulted: BTreeSet::new(),
            pending_triggers: Vec::new(),
            replan_queued: false,
            lookup: None,
            waiters: VecDeque::new(),
            series: MetricsSeries {
                task_ids: setup.tasks.iter().map(|t| t.id.clone()).collect(),
                ..Default::default()
            },
            summary: SimSummary {
                policy: policy.name().to_owned(),
                horizon: trace.horizon,
                accumulated_waf: 0.0,
                ideal_waf: 0.0,
                failures: BTreeMap::new(),
                escalations: 0,
                replans: 0,
                lookup_hits: 0,
                downtime_s: BTreeMap::new(),
                violations: 0,
            },
        };

        let mut free = sim.cluster.free_workers().into_iter();
        for (t, &x) in setup.tasks.iter().zip(&alloc) {
            let workers: Vec<WorkerId> = free.by_ref().take(x as usize).collect();
            sim.cluster.assign(&t.id, workers.iter().cloned().collect());
            sim.runs.push(TaskRun {
                x,
                target: x,
                workers,
                lost: BTreeSet::new(),
                phase: if x > 0 { Phase::Running } else { Phase::Idle },
                token: 0,
                run_since: 0.0,
                fault_time: None,
                downtime: 0.0,
            });
        }
        sim.summary.ideal_waf = trace.horizon * sim.cluster_rate();
        if policy == Policy::Unicron {
            sim.refresh_lookup();
        }
        for (i, e) in trace.events.iter().enumerate() {
            if e.t < trace.horizon {
                sim.push(e.t, EvKind::Trace(i));
            }
        }
        Ok(sim)
    }

    fn push(&mut self, t: f64, kind: EvKind) {
        self.seq += 1;
        self.queue.push(Queued { t, class: kind.class(), seq: self.seq, kind });
    }

    fn rate(&self, i: usize) -> f64 {
        let r = &self.runs[i];
        if r.phase == Phase::Running {
            waf(&self.setup.tasks[i], r.x)
        } else {
            0.0
        }
    }

    fn cluster_rate(&self) -> f64 {
        (0..self.runs.len()).map(|i| self.rate(i)).sum()
    }

    fn sample(&mut self, t: f64, accumulated: f64) {
        if !self.opts.record {
            return;
        }
        let per_task: Vec<f64> = (0..self.runs.len()).map(|i| self.rate(i)).collect();
        let cluster = per_task.iter().sum();
        self.series.samples.push(Sample { time: t, per_task, cluster, accumulated });
    }

    /// Accrues WAF and downtime up to `to`, emitting tick samples on the way.
    fn advance(&mut self, to: f64) {
        let rate = self.cluster_rate();
        if let Some(step) = self.opts.step() {
            while self.next_tick < to {
                let tick = self.next_tick;
                let acc = self.acc + rate * (tick - self.now);
                self.sample(tick, acc);
                self.next_tick += step;
            }
            if self.next_tick == to {
                self.next_tick += step;
            }
        }
        let dt = to - self.now;
        self.acc += rate * dt;
        for r in &mut self.runs {
            if r.x > 0 && r.phase != Phase::Running || r.phase == Phase::Waiting {
                r.downtime += dt;
            }
        }
        self.now = to;
    }

    fn run(&mut self) -> Result<(), SimError> {
        self.sample(0.0, 0.0);
        while let Some(t) = self.queue.peek().map(|q| q.t) {
            if t >= self.trace.horizon {
                break;
            }
            self.advance(t);
            while self.queue.peek().is_some_and(|q| q.t == t) {
                let ev = self.queue.pop().expect("peeked");
                self.handle(ev.kind)?;
            }
            self.summary.violations += validate_cluster(&self.cluster).len();
            self.sample(t, self.acc);
        }
        self.advance(self.trace.horizon);
        self.sample(self.trace.horizon, self.acc);
        Ok(())
    }

    fn finish(mut self) -> SimOutput {
        self.series.accumulated_waf = self.acc;
        self.summary.accumulated_waf = self.acc;
        self.summary.downtime_s =
            self.setup.tasks.iter().zip(&self.runs).map(|(t, r)| (t.id.clone(), r.downtime)).collect();
        SimOutput { series: self.series, summary: self.summary }
    }

    fn handle(&mut self, kind: EvKind) -> Result<(), SimError> {
        match kind {
            EvKind::Trace(i) => self.on_trace(i),
            EvKind::Repair { node, cause } => {
                self.on_repair(&node, cause);
                Ok(())
            }
            EvKind::Detected { sev, subject, task } => self.on_detected(sev, subject, task),
            EvKind::Resume { task, token } => {
                let r = &mut self.runs[task];
                if r.token == token && r.phase == Phase::Transition {
                    r.phase = Phase::Running;
                    r.run_since = self.now;
                    r.fault_time = None;
                    r.token += 1;
                }
                Ok(())
            }
            EvKind::Replan => self.replan(),
        }
    }

    fn count(&mut self, kind: TraceKind) {
        *self.summary.failures.entry(kind_name(kind).to_owned()).or_insert(0) += 1;
    }

    fn task_index(&self, w: &WorkerId) -> Option<usize> {
        let id = self.cluster.worker(w)?.assigned_task.as_ref()?;
        self.setup.tasks.iter().position(|t| &t.id == id)
    }

    /// Tasks holding a live (not yet evicted) worker on `node`.
    fn tasks_on(&self, node: &NodeId) -> Vec<usize> {
        let on = self.cluster.tasks_on_node(node);
        (0..self.runs.len()).filter(|i| on.contains(&self.setup.tasks[*i].id)).collect()
    }

    fn hang(&mut self, i: usize) {
        let now = self.now;
        let r = &mut self.runs[i];
        if matches!(r.phase, Phase::Running | Phase::Transition) {
            if r.phase == Phase::Running || r.fault_time.is_none() {
                r.fault_time = Some(now);
            }
            r.phase = Phase::Hung;
            r.token += 1;
        }
    }

    fn on_trace(&mut self, idx: usize) -> Result<(), SimError> {
        let ev = &self.trace.events[idx];
        let unknown = || SimError::UnknownSubject { t: ev.t, subject: ev.subject.clone() };
        match ev.kind {
            TraceKind::NodeRepair => {
                let node = NodeId::new(ev.subject.as_str());
                self.cluster.node(&node).ok_or_else(unknown)?;
                self.on_repair(&node, DownCause::Trace);
            }
            TraceKind::Sev1NodeFault => {
                let node = NodeId::new(ev.subject.as_str());
                self.cluster.node(&node).ok_or_else(unknown)?;
                if self.down.contains_key(&node) {
                    return Ok(());
                }
                self.count(ev.kind);
                self.down.insert(node.clone(), DownCause::Trace);
                for i in self.tasks_on(&node) {
                    self.hang(i);
                }
                let latency = self.latency(Severity::Sev1, ev.source, None)?;
                self.push(
                    self.now + latency,
                    EvKind::Detected { sev: Severity::Sev1, subject: Subject::Node(node), task: None },
                );
            }
            TraceKind::Sev2Error | TraceKind::Sev3Error => {
                let w = WorkerId::new(ev.subject.as_str());
                let node = self.cluster.worker(&w).ok_or_else(unknown)?.node_id.clone();
                if self.down.contains_key(&node) {
                    return Ok(());
                }
                self.count(ev.kind);
                let Some(i) = self.task_index(&w) else { return Ok(()) };
                if self.runs[i].phase != Phase::Running {
                    // Masked by the recovery already under way.
                    return Ok(());
                }
                self.hang(i);
                let sev = ev.kind.severity().expect("error kinds carry a severity");
                let latency = self.latency(sev, ev.source, Some(i))?;
                let token = self.runs[i].token;
                self.push(
                    self.now + latency,
                    EvKind::Detected { sev, subject: Subject::Worker(w), task: Some((i, token)) },
                );
            }
        }
        Ok(())
    }

    /// Seconds from failure to the event reaching the coordinator.
    fn latency(&self, sev: Severity, source: Option<DetectionSource>, task: Option<usize>) -> Result<f64, SimError> {
        let d = &self.setup.detection;
        if self.policy.restart_style() {
            return Ok(if sev == Severity::Sev1 { d.baseline_node_latency_s } else { d.baseline_timeout_s });
        }
        let source = source.unwrap_or(match sev {
            Severity::Sev1 => DetectionSource::NodeHealth,
            Severity::Sev2 => DetectionSource::ProcessSupervision,
            Severity::Sev3 => DetectionSource::StatisticalMonitoring,
        });
        Ok(match source {
            DetectionSource::NodeHealth => d.node_latency_s,
            DetectionSource::ProcessSupervision => d.process_latency_s,
            DetectionSource::ExceptionPropagation => d.exception_latency_s,
            DetectionSource::StatisticalMonitoring => match task {
                Some(i) => self.statistical_latency(i)?,
                None => d.node_latency_s,
            },
        })
    }

    /// Replays a steady iteration history into the statistical monitor and
    /// asks when it declares the stall.
    fn statistical_latency(&self, i: usize) -> Result<f64, SimError> {
        let d = &self.setup.detection;
        let task = &self.setup.tasks[i];
        let mut stats = IterationStats::from_config(d);
        let elapsed = (self.now - self.runs[i].run_since).max(0.0);
        let last = self.now - elapsed % task.d_iter;
        let n = stats.window();
        for k in 0..n {
            stats.observe_iteration(&task.id, task.d_iter, last - (n - 1 - k) as f64 * task.d_iter)?;
        }
        Ok((stats.failure_detection_time(&task.id, d.check_period_s)? - self.now).max(0.0))
    }

    fn on_repair(&mut self, node: &NodeId, cause: DownCause) {
        if self.down.get(node) != Some(&cause) {
            return;
        }
        if self.cluster.node(node).is_some_and(|n| n.health == Health::Healthy) {
            self.deferred.insert(node.clone());
            return;
        }
        self.down.remove(node);
        self.cluster.set_node_health(node, Health::Healthy);
        match self.policy {
            Policy::Unicron => {
                self.pending_triggers.push(Perturbation::NodeJoin(node.clone()));
                self.queue_replan();
            }
            Policy::AffectedTaskOnly => self.serve_deficits(),
            _ => self.start_waiting(),
        }
    }

    fn queue_replan(&mut self) {
        if !self.replan_queued {
            self.replan_queued = true;
            self.push(self.now, EvKind::Replan);
        }
    }

    fn on_detected(&mut self, sev: Severity, subject: Subject, task: Option<(usize, u64)>) -> Result<(), SimError> {
        match (sev, subject) {
            (Severity::Sev1, Subject::Node(node)) => self.node_lost(&node),
            (_, Subject::Worker(w)) => {
                let Some((i, token)) = task else { return Ok(()) };
                if self.runs[i].token != token {
                    return Ok(());
                }
                if self.policy.restart_style() {
                    let d = self.restart_duration(i);
                    self.enter_transition(i, d);
                    return Ok(());
                }
                let mut sev = sev;
                if sev == Severity::Sev3 {
                    if self.attempt(self.setup.costs.reattempt_success) {
                        let d = self.setup.costs.reattempt_backoff_s + self.recompute(i, false);
                        self.enter_transition(i, d);
                        return Ok(());
                    }
                    self.summary.escalations += 1;
                    sev = Severity::Sev2;
                }
                debug_assert_eq!(sev, Severity::Sev2);
                if self.attempt(self.setup.costs.restart_success) {
                    let d = self.process_restart_duration(i, &w)?;
                    self.enter_transition(i, d);
                    return Ok(());
                }
                self.summary.escalations += 1;
                let node = self.cluster.worker(&w).expect("known worker").node_id.clone();
                self.escalate_node(&node)
            }
            (_, Subject::Node(node)) => self.node_lost(&node),
        }
    }

    fn attempt(&mut self, p: f64) -> bool {
        p >= 1.0 || self.rng.random::<f64>() < p
    }

    /// A failed restart drains the node for a long repair.
    fn escalate_node(&mut self, node: &NodeId) -> Result<(), SimError> {
        if self.down.contains_key(node) {
            return Ok(());
        }
        self.down.insert(node.clone(), DownCause::Escalated);
        for i in self.tasks_on(node) {
            self.hang(i);
        }
        self.node_lost(node)?;
        let at = self.now + self.setup.costs.escalated_repair_s;
        self.push(at, EvKind::Repair { node: node.clone(), cause: DownCause::Escalated });
        Ok(())
    }

    fn node_lost(&mut self, node: &NodeId) -> Result<(), SimError> {
        if self.cluster.node(node).is_none_or(|n| n.health != Health::Healthy) {
            return Ok(());
        }
        let affected = self.tasks_on(node);
        let on_node: BTreeSet<WorkerId> =
            self.cluster.node(node).expect("checked").worker_ids.iter().cloned().collect();
        let fault = Perturbation::NodeFault(node.clone());
        let health = if self.down.get(node) == Some(&DownCause::Escalated) { Health::Drained } else { Health::Lost };
        self.cluster.set_node_health(node, health);
        self.cluster.evict_node(node);
        for &i in &affected {
            let r = &mut self.runs[i];
            r.lost.extend(r.workers.iter().filter(|w| on_node.contains(*w)).cloned());
        }
        match self.policy {
            Policy::Unicron => {
                self.pending_faulted.extend(affected);
                self.pending_triggers.push(fault);
                self.queue_replan();
            }
            Policy::AffectedTaskOnly => {
                for i in affected {
                    self.solo_resolve(i, true)?;
                    if self.runs[i].x < self.runs[i].target && !self.waiters.contains(&i) {
                        self.waiters.push_back(i);
                    }
                }
            }
            _ => {
                for i in affected {
                    let r = &mut self.runs[i];
                    r.phase = Phase::Waiting;
                    r.token += 1;
                    if !self.waiters.contains(&i) {
                        self.waiters.push_back(i);
                    }
                }
                self.start_waiting();
            }
        }
        if self.deferred.remove(node) {
            let cause = self.down[node];
            self.push(self.now, EvKind::Repair { node: node.clone(), cause });
        }
        Ok(())
    }

    fn recompute(&self, i: usize, restart: bool) -> f64 {
        let r = &self.runs[i];
        let Some(fault) = r.fault_time else { return 0.0 };
        let elapsed = (fault - r.run_since).max(0.0);
        let cost = if restart {
            recomputation_cost(elapsed % self.setup.cost.checkpoint_interval, RecomputePolicy::Restart)
        } else {
            recomputation_cost(elapsed, RecomputePolicy::Resume { d_iter: self.setup.tasks[i].d_iter })
        };
        cost * self.setup.costs.recompute_scale
    }

    fn restart_duration(&self, i: usize) -> f64 {
        let c = &self.setup.costs;
        c.resubmit_s + c.env_setup_s + c.remote_load_s + self.recompute(i, true)
    }

    /// In-place process restart of the task owning `w`.
    fn process_restart_duration(&self, i: usize, w: &WorkerId) -> Result<f64, SimError> {
        let r = &self.runs[i];
        let layout = self.setup.tasks[i].calibration.get(r.x).expect("running count is calibrated").layout;
        let req = MigrationRequest {
            old: Some((layout, r.workers.clone())),
            lost: [w.clone()].into(),
            new: layout,
            new_workers: r.workers.clone(),
            in_memory_age: Some(0.0),
            remote_age: Some(0.0),
        };
        let mig = plan_migration(&req, &self.setup.costs)?;
        Ok(self.setup.costs.process_restart_s + mig.cost_s + self.recompute(i, false))
    }

    fn enter_transition(&mut self, i: usize, duration: f64) {
        let phys_down = self.runs[i]
            .workers
            .iter()
            .any(|w| self.cluster.worker(w).is_some_and(|w| self.down.contains_key(&w.node_id)));
        let r = &mut self.runs[i];
        r.token += 1;
        if phys_down {
            // Landed on a dead node nobody has noticed yet.
            r.phase = Phase::Hung;
            r.fault_time.get_or_insert(self.now);
            return;
        }
        r.phase = Phase::Transition;
        let token = r.token;
        self.push(self.now + duration.max(0.0), EvKind::Resume { task: i, token });
    }

    fn inputs(&self, faulted: &BTreeSet<usize>) -> RewardInputs {
        let mut inputs = RewardInputs::new(self.setup.tasks.clone(), self.cluster.healthy_count(), self.setup.cost)
            .with_current(&self.runs.iter().map(|r| r.x).collect::<Vec<_>>());
        for &i in faulted {
            inputs = inputs.with_fault(self.setup.tasks[i].id.clone());
        }
        inputs
    }

    fn refresh_lookup(&mut self) {
        let base = self.inputs(&BTreeSet::new());
        let join = self.cluster.nodes.first().map_or(0, |n| n.worker_ids.len() as u32);
        let table = precompute_lookup(&self.cluster, &base, join);
        self.lookup = Some(LookupCache { cluster: self.cluster.clone(), base, table });
    }

    fn replan(&mut self) -> Result<(), SimError> {
        self.replan_queued = false;
        let faulted = std::mem::take(&mut self.pending_faulted);
        let triggers = std::mem::take(&mut self.pending_triggers);
        let inputs = self.inputs(&faulted);
        let cached = match (&self.lookup, triggers.as_slice()) {
            (Some(c), [p]) => {
                let expect = p.apply(&c.cluster, &c.base);
                if expect.capacity == inputs.capacity
                    && expect.current == inputs.current
                    && expect.faulted == inputs.faulted
                {
                    c.table.get(p).cloned()
                } else {
                    None
                }
            }
            _ => None,
        };
        if cached.is_some() {
            self.summary.lookup_hits += 1;
        }
        let plan = cached.unwrap_or_else(|| solve(&inputs));
        self.summary.replans += 1;
        let all: Vec<usize> = (0..self.runs.len()).collect();
        self.apply_allocation(&plan.assignment(), &all, &faulted)?;
        self.refresh_lookup();
        Ok(())
    }

    /// Re-solves one task against its own workers plus the free pool.
    fn solo_resolve(&mut self, i: usize, faulted: bool) -> Result<(), SimError> {
        let held = self.healthy_held(i).len() as u32;
        let capacity = held + self.cluster.free_workers().len() as u32;
        let mut inputs = RewardInputs::new(vec![self.setup.tasks[i].clone()], capacity, self.setup.cost)
            .with_current(&[self.runs[i].x]);
        if faulted {
            inputs = inputs.with_fault(self.setup.tasks[i].id.clone());
        }
        let x = solve(&inputs).tasks[0].x;
        self.summary.replans += 1;
        let mut alloc: Vec<u32> = self.runs.iter().map(|r| r.x).collect();
        alloc[i] = x;
        let flagged = if faulted { [i].into() } else { BTreeSet::new() };
        self.apply_allocation(&alloc, &[i], &flagged)
    }

    fn serve_deficits(&mut self) {
        let queued: Vec<usize> = self.waiters.iter().copied().collect();
        for i in queued {
            // Solving with a valid count and in-memory state cannot fail.
            self.solo_resolve(i, false).expect("deficit re-solve");
            if self.runs[i].x >= self.runs[i].target {
                self.waiters.retain(|j| *j != i);
            }
        }
    }

    fn healthy_held(&self, i: usize) -> Vec<WorkerId> {
        let r = &self.runs[i];
        r.workers
            .iter()
            .filter(|w| !r.lost.contains(*w) && self.cluster.worker(w).is_some_and(|w| w.health == Health::Healthy))
            .cloned()
            .collect()
    }

    /// Moves the tasks in `scope` to the counts in `alloc`: shrinking tasks
    /// drop their trailing workers first, growing ones take free workers in
    /// declaration order. Changed or faulted tasks go into transition.
    fn apply_allocation(&mut self, alloc: &[u32], scope: &[usize], faulted: &BTreeSet<usize>) -> Result<(), SimError> {
        let mut kept: BTreeMap<usize, Vec<WorkerId>> = BTreeMap::new();
        for &i in scope {
            let mut held = self.healthy_held(i);
            held.truncate(alloc[i] as usize);
            self.cluster.assign(&self.setup.tasks[i].id, held.iter().cloned().collect());
            kept.insert(i, held);
        }
        let mut free = self.cluster.free_workers().into_iter();
        for &i in scope {
            let list = kept.get_mut(&i).expect("scoped");
            let need = (alloc[i] as usize).saturating_sub(list.len());
            list.extend(free.by_ref().take(need));
            self.cluster.assign(&self.setup.tasks[i].id, list.iter().cloned().collect());
        }
        for &i in scope {
            let new_workers = kept.remove(&i).expect("scoped");
            let old_x = self.runs[i].x;
            let changed = alloc[i] != old_x || faulted.contains(&i);
            if !changed {
                continue;
            }
            if alloc[i] == 0 {
                let r = &mut self.runs[i];
                r.x = 0;
                r.workers.clear();
                r.lost.clear();
                r.phase = Phase::Idle;
                r.fault_time = None;
                r.token += 1;
                continue;
            }
            let task = &self.setup.tasks[i];
            let new_layout = task.calibration.get(alloc[i]).expect("planner returns calibrated counts").layout;
            let old = (old_x > 0).then(|| {
                (task.calibration.get(old_x).expect("held count is calibrated").layout, self.runs[i].workers.clone())
            });
            let req = MigrationRequest {
                old,
                lost: self.runs[i].lost.clone(),
                new: new_layout,
                new_workers: new_workers.clone(),
                in_memory_age: Some(0.0),
                remote_age: Some(0.0),
            };
            let mig = plan_migration(&req, &self.setup.costs)?;
            let duration = self.setup.costs.process_restart_s + mig.cost_s + self.recompute(i, false);
            let r = &mut self.runs[i];
            r.x = alloc[i];
            r.workers = new_workers;
            r.lost.clear();
            self.enter_transition(i, duration);
        }
        Ok(())
    }

    /// Restart-style: relaunch queued tasks whose lost slots can be refilled.
    fn start_waiting(&mut self) {
        let queued: Vec<usize> = self.waiters.iter().copied().collect();
        for i in queued {
            let free = self.cluster.free_workers();
            let r = &self.runs[i];
            let missing: Vec<usize> = r
                .workers
                .iter()
                .enumerate()
                .filter(|(_, w)| {
                    r.lost.contains(*w) || self.cluster.worker(w).is_none_or(|w| w.health != Health::Healthy)
                })
                .map(|(k, _)| k)
                .collect();
            if missing.len() > free.len() {
                continue;
            }
            let mut workers = r.workers.clone();
            for (k, w) in missing.into_iter().zip(free) {
                workers[k] = w;
            }
            self.cluster.assign(&self.setup.tasks[i].id, workers.iter().cloned().collect());
            let duration = self.restart_duration(i);
            let r = &mut self.runs[i];
            r.workers = workers;
            r.lost.clear();
            self.waiters.retain(|j| *j != i);
            self.enter_transition(i, duration);
        }
    }
}
