use serde::{Deserialize, Serialize};

use super::ids::TaskId;
use super::table::Layout;

/// Planner output for one task. Unscheduled tasks have `x == 0` and no layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub id: TaskId,
    pub x: u32,
    pub layout: Option<Layout>,
    /// Micro-batches owned by each DP rank, when the global batch size is known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub micro_batches: Vec<u32>,
}

/// Worker-count assignment for every task plus the reward it achieves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub tasks: Vec<TaskPlan>,
    pub objective: f64,
}

impl Plan {
    pub fn total_workers(&self) -> u32 {
        self.tasks.iter().map(|t| t.x).sum()
    }

    pub fn assignment(&self) -> Vec<u32> {
        self.tasks.iter().map(|t| t.x).collect()
    }

    pub fn get(&self, id: &TaskId) -> Option<&TaskPlan> {
        self.tasks.iter().find(|t| &t.id == id)
    }
}

/// Parameters of the failure-cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// Per-worker sev1 failure rate, 1/s.
    pub lambda_worker: f64,
    /// Estimated transition duration, s.
    pub d_transition: f64,
    /// Persistent checkpoint interval, s.
    pub checkpoint_interval: f64,
    /// Evaluation horizon, s.
    pub horizon: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        // 10 node faults per 8 weeks on 128 GPUs.
        let horizon = 8.0 * 7.0 * 86_400.0;
        Self { lambda_worker: 10.0 / (horizon * 128.0), d_transition: 60.0, checkpoint_interval: 1800.0, horizon }
    }
}

impl CostParams {
    /// Returns the names of fields that violate their constraints.
    pub fn violations(&self, max_d_iter: f64) -> Vec<String> {
        let mut bad = Vec::new();
        let fields = [
            ("lambda_worker", self.lambda_worker),
            ("checkpoint_interval", self.checkpoint_interval),
            ("horizon", self.horizon),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                bad.push(format!("cost_params.{name} must be > 0 (got {v})"));
            }
        }
        if !(self.d_transition.is_finite() && self.d_transition >= 0.0) {
            bad.push(format!("cost_params.d_transition must be >= 0 (got {})", self.d_transition));
        }
        if self.checkpoint_interval < max_d_iter {
            bad.push(format!(
                "cost_params.checkpoint_interval ({}) must be >= the longest d_iter ({max_d_iter})",
                self.checkpoint_interval
            ));
        }
        bad
    }
}
