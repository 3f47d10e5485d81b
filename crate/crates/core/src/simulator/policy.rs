use std::fmt;
use std::str::FromStr;

use crate::domain::TaskSpec;

/// Recovery behavior under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    /// Full pipeline: fast detection, severity-graded recovery, cluster-wide replanning.
    Unicron,
    /// Terminate and resubmit the affected task from the remote checkpoint.
    /// With `hot_spare`, a spare node is available to replace a lost one.
    RestartCheckpoint {
        hot_spare: bool,
    },
    /// Fast detection and recovery, but only the impacted task is resized.
    AffectedTaskOnly,
    /// Fixed allocations with restart-style recovery.
    StaticEqually,
    StaticWeighted,
    StaticSized,
}

impl Policy {
    pub const BASELINES: [Policy; 5] = [
        Policy::RestartCheckpoint { hot_spare: false },
        Policy::AffectedTaskOnly,
        Policy::StaticEqually,
        Policy::StaticWeighted,
        Policy::StaticSized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Unicron => "unicron",
            Policy::RestartCheckpoint { hot_spare: false } => "restart_checkpoint",
            Policy::RestartCheckpoint { hot_spare: true } => "restart_checkpoint_hot_spare",
            Policy::AffectedTaskOnly => "affected_task_only",
            Policy::StaticEqually => "static_equally",
            Policy::StaticWeighted => "static_weighted",
            Policy::StaticSized => "static_sized",
        }
    }

    /// Terminate-and-resubmit recovery with checkpoint reload.
    pub fn restart_style(self) -> bool {
        matches!(
            self,
            Policy::RestartCheckpoint { .. } | Policy::StaticEqually | Policy::StaticWeighted | Policy::StaticSized
        )
    }

    pub fn spare_nodes(self, configured: usize) -> usize {
        match self {
            Policy::RestartCheckpoint { hot_spare: true } => configured,
            _ => 0,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "unicron" => Policy::Unicron,
            "restart_checkpoint" => Policy::RestartCheckpoint { hot_spare: false },
            "restart_checkpoint_hot_spare" => Policy::RestartCheckpoint { hot_spare: true },
            "affected_task_only" => Policy::AffectedTaskOnly,
            "static_equally" => Policy::StaticEqually,
            "static_weighted" => Policy::StaticWeighted,
            "static_sized" => Policy::StaticSized,
            other => return Err(format!("unknown policy {other:?}")),
        })
    }
}

/// Largest schedulable count not above `share`, or 0.
fn round_down(task: &TaskSpec, share: u32) -> u32 {
    task.calibration.schedulable().map(|(x, _)| x).filter(|x| *x <= share && *x >= task.min_workers).max().unwrap_or(0)
}

/// Allocation of the static baselines: capacity split evenly, by weight,
/// or by model size, each share rounded down to a calibrated count.
pub fn static_allocation(policy: Policy, tasks: &[TaskSpec], capacity: u32) -> Option<Vec<u32>> {
    let keys: Vec<f64> = match policy {
        Policy::StaticEqually => vec![1.0; tasks.len()],
        Policy::StaticWeighted => tasks.iter().map(|t| t.weight).collect(),
        Policy::StaticSized => tasks.iter().map(|t| t.model_size).collect(),
        _ => return None,
    };
    let total: f64 = keys.iter().sum();
    Some(
        tasks.iter().zip(&keys).map(|(t, k)| round_down(t, (f64::from(capacity) * k / total).floor() as u32)).collect(),
    )
}
