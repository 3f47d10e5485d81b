use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

use crate::domain::TaskId;

/// Rates in force from `time` until the next sample, and the WAF
/// accumulated up to `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub per_task: Vec<f64>,
    pub cluster: f64,
    pub accumulated: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsSeries {
    pub task_ids: Vec<TaskId>,
    pub samples: Vec<Sample>,
    /// Integral of cluster WAF over the whole run, FLOPs.
    pub accumulated_waf: f64,
}

impl MetricsSeries {
    /// `time_s,task_id,waf,cluster_waf,accumulated_waf`, one row per task per sample.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "task_id", "waf", "cluster_waf", "accumulated_waf"])?;
        for s in &self.samples {
            for (id, waf) in self.task_ids.iter().zip(&s.per_task) {
                w.write_record([
                    s.time.to_string(),
                    id.to_string(),
                    waf.to_string(),
                    s.cluster.to_string(),
                    s.accumulated.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Piecewise-constant integral of the sampled cluster WAF.
    pub fn integrate_samples(&self) -> f64 {
        let mut acc = 0.0;
        for w in self.samples.windows(2) {
            acc += w[0].cluster * (w[1].time - w[0].time);
        }
        acc
    }
}

/// Per-run totals written next to the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub policy: String,
    pub horizon: f64,
    pub accumulated_waf: f64,
    /// Cluster WAF with every task at its initial allocation for the whole horizon.
    pub ideal_waf: f64,
    /// Trace events by kind that reached a live subject.
    pub failures: BTreeMap<String, usize>,
    pub escalations: usize,
    pub replans: usize,
    /// Replans answered from the precomputed lookup table.
    pub lookup_hits: usize,
    /// Seconds each task spent scheduled but not training.
    pub downtime_s: BTreeMap<TaskId, f64>,
    /// Capacity or exclusivity violations seen during the run; always 0.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: String,
    pub accumulated_waf: f64,
    /// Unicron's accumulated WAF divided by this policy's.
    pub unicron_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub horizon: f64,
    pub seed: u64,
    pub results: Vec<PolicyResult>,
}
