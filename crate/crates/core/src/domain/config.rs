use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::cluster::ClusterState;
use super::ids::{NodeId, TaskId};
use super::plan::CostParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Either an explicit node list or a uniform `count x gpus_per_node` cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodesSpec {
    Uniform { count: usize, gpus_per_node: usize },
    List(Vec<NodeEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub id: NodeId,
    #[serde(default = "default_gpus")]
    pub gpus: usize,
}

fn default_gpus() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub id: TaskId,
    pub model_size: f64,
    #[serde(default = "one")]
    pub weight: f64,
    pub min_workers: u32,
    pub d_iter: f64,
}

fn one() -> f64 {
    1.0
}

/// Detector thresholds and the end-to-end latencies the simulator charges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub heartbeat_period_s: f64,
    pub heartbeat_timeout_s: f64,
    pub supervision_period_s: f64,
    pub check_period_s: f64,
    pub degraded_factor: f64,
    pub failed_factor: f64,
    pub window: usize,
    /// Node-health detection latency.
    pub node_latency_s: f64,
    /// Process-supervision detection latency.
    pub process_latency_s: f64,
    /// Exception-propagation detection latency.
    pub exception_latency_s: f64,
    /// Node loss as seen by a plain training framework.
    pub baseline_node_latency_s: f64,
    /// Collective-communication timeout of a plain training framework.
    pub baseline_timeout_s: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            heartbeat_period_s: 1.0,
            heartbeat_timeout_s: 5.0,
            supervision_period_s: 1.0,
            check_period_s: 1.0,
            degraded_factor: 1.1,
            failed_factor: 3.0,
            window: 16,
            node_latency_s: 5.6,
            process_latency_s: 1.8,
            exception_latency_s: 0.3,
            baseline_node_latency_s: 5.7,
            baseline_timeout_s: 1800.0,
        }
    }
}

/// Parameters of the analytic throughput model used when no calibration
/// CSV is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthModel {
    /// Peak FLOP/s of one worker.
    pub peak_flops: f64,
    /// Best achievable fraction of peak on a single worker.
    pub base_efficiency: f64,
    pub gpu_memory_bytes: f64,
    /// Fraction of device memory usable for parameters and optimizer state.
    pub memory_headroom: f64,
    /// Bytes of training state per parameter (mixed-precision Adam).
    pub bytes_per_param: f64,
    pub node_size: u32,
    /// Throughput loss per doubling of tensor parallelism.
    pub tp_penalty: f64,
    /// Gradient all-reduce cost relative to one micro-batch of compute.
    pub dp_comm: f64,
    /// Micro-batches per global batch for a 1B-parameter model; scales with sqrt(size).
    pub micro_batches_per_sqrt_b: u32,
}

impl Default for SynthModel {
    fn default() -> Self {
        Self {
            peak_flops: 312e12,
            base_efficiency: 0.55,
            gpu_memory_bytes: 80e9,
            memory_headroom: 0.8,
            bytes_per_param: 16.0,
            node_size: 8,
            tp_penalty: 0.10,
            dp_comm: 0.3,
            micro_batches_per_sqrt_b: 32,
        }
    }
}

/// Transition and restart costs charged by the simulator, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimCosts {
    pub replica_copy_s: f64,
    pub in_memory_load_s: f64,
    pub remote_load_s: f64,
    /// Relaunching the training process on one node.
    pub process_restart_s: f64,
    pub reattempt_backoff_s: f64,
    /// Scheduler resubmission wait after a task is terminated.
    pub resubmit_s: f64,
    /// Environment and CUDA initialization of a freshly submitted task.
    pub env_setup_s: f64,
    /// Multiplier on recomputation time; 0 disables recomputation cost.
    pub recompute_scale: f64,
    pub reattempt_success: f64,
    pub restart_success: f64,
    /// Repair delay for a node drained after a failed restart.
    pub escalated_repair_s: f64,
    /// Spare nodes available to the restart baseline in hot-spare mode.
    pub hot_spare_nodes: usize,
}

impl Default for SimCosts {
    fn default() -> Self {
        Self {
            replica_copy_s: 10.0,
            in_memory_load_s: 30.0,
            remote_load_s: 300.0,
            process_restart_s: 60.0,
            reattempt_backoff_s: 1.0,
            resubmit_s: 540.0,
            env_setup_s: 840.0,
            recompute_scale: 1.0,
            reattempt_success: 1.0,
            restart_success: 1.0,
            escalated_repair_s: 86_400.0,
            hot_spare_nodes: 1,
        }
    }
}

impl SimCosts {
    /// Every transition, migration and recomputation cost set to zero.
    pub fn zero() -> Self {
        Self {
            replica_copy_s: 0.0,
            in_memory_load_s: 0.0,
            remote_load_s: 0.0,
            process_restart_s: 0.0,
            reattempt_backoff_s: 0.0,
            resubmit_s: 0.0,
            env_setup_s: 0.0,
            recompute_scale: 0.0,
            ..Self::default()
        }
    }
}

/// Parsed cluster/task configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub nodes: NodesSpec,
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub cost_params: CostParams,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub synthetic: SynthModel,
    #[serde(default)]
    pub sim: SimCosts,
    /// Calibration CSV path, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        let problems = cfg.problems();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the raw config bytes.
    pub fn digest(raw: &[u8]) -> String {
        hex::encode(Sha256::digest(raw))
    }

    pub fn cluster(&self) -> ClusterState {
        match &self.nodes {
            NodesSpec::Uniform { count, gpus_per_node } => ClusterState::uniform(*count, *gpus_per_node),
            NodesSpec::List(list) => {
                let spec: Vec<(NodeId, usize)> = list.iter().map(|n| (n.id.clone(), n.gpus)).collect();
                ClusterState::from_nodes(&spec)
            }
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.tasks.is_empty() {
            bad.push("tasks: at least one task is required".to_owned());
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if !seen.insert(&t.id) {
                bad.push(format!("tasks[{i}].id: duplicate id {}", t.id));
            }
            if !(t.weight.is_finite() && t.weight > 0.0) {
                bad.push(format!("tasks[{i}].weight must be > 0 (got {})", t.weight));
            }
            if t.min_workers < 1 {
                bad.push(format!("tasks[{i}].min_workers must be >= 1"));
            }
            if !(t.d_iter.is_finite() && t.d_iter > 0.0) {
                bad.push(format!("tasks[{i}].d_iter must be > 0 (got {})", t.d_iter));
            }
            if !(t.model_size.is_finite() && t.model_size > 0.0) {
                bad.push(format!("tasks[{i}].model_size must be > 0 (got {})", t.model_size));
            }
        }
        match &self.nodes {
            NodesSpec::Uniform { count, gpus_per_node } => {
                if *count == 0 || *gpus_per_node == 0 {
                    bad.push("nodes: count and gpus_per_node must be >= 1".to_owned());
                }
            }
            NodesSpec::List(list) => {
                let mut ids = std::collections::BTreeSet::new();
                for (i, n) in list.iter().enumerate() {
                    if !ids.insert(&n.id) {
                        bad.push(format!("nodes[{i}].id: duplicate id {}", n.id));
                    }
                }
            }
        }
        let max_iter = self.tasks.iter().map(|t| t.d_iter).fold(0.0, f64::max);
        bad.extend(self.cost_params.violations(max_iter));
        let d = &self.detection;
        if d.heartbeat_timeout_s <= d.heartbeat_period_s {
            bad.push("detection.heartbeat_timeout_s must exceed heartbeat_period_s".to_owned());
        }
        if d.window == 0 {
            bad.push("detection.window must be >= 1".to_owned());
        }
        if !(d.degraded_factor > 1.0 && d.failed_factor > d.degraded_factor) {
            bad.push("detection: need 1 < degraded_factor < failed_factor".to_owned());
        }
        bad
    }
}
