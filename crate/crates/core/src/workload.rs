//! Multi-task workload presets and config-to-task assembly.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::domain::{
    read_calibration, CalibrationRow, NodesSpec, RunConfig, SynthModel, TableError, TaskConfig, TaskId, TaskSpec,
    ThroughputTable,
};
use crate::planner::{min_feasible_workers, synthesize_table};

const SIZES: [(f64, &str); 3] = [(1.3e9, "1.3b"), (7e9, "7b"), (13e9, "13b")];

/// Iteration time assumed for each preset model size, seconds.
pub fn default_d_iter(size: f64) -> f64 {
    if size <= 2e9 {
        20.0
    } else if size <= 8e9 {
        40.0
    } else {
        60.0
    }
}

fn sized(i: usize, size: f64, weight: f64, model: &SynthModel) -> TaskConfig {
    let label = SIZES.iter().find(|(s, _)| *s == size).map_or("m", |(_, l)| l);
    TaskConfig {
        id: TaskId::new(format!("t{}-{label}", i + 1)),
        model_size: size,
        weight,
        min_workers: min_feasible_workers(size, model).unwrap_or(1),
        d_iter: default_d_iter(size),
    }
}

/// The five six-task mixes (1-based). `None` for any other number.
pub fn case_tasks(case: u32, model: &SynthModel) -> Option<Vec<TaskConfig>> {
    let mixed = [1.3e9, 1.3e9, 1.3e9, 7e9, 7e9, 13e9];
    let ramp = [0.5, 0.8, 1.1, 1.4, 1.7, 2.0];
    let (sizes, weights): ([f64; 6], [f64; 6]) = match case {
        1 => ([7e9; 6], [1.0; 6]),
        2 => (mixed, [1.0; 6]),
        3 => ([7e9; 6], ramp),
        4 => (mixed, ramp),
        5 => (mixed, [2.0, 1.7, 1.4, 1.1, 0.8, 0.5]),
        _ => return None,
    };
    Some(sizes.iter().zip(weights).enumerate().map(|(i, (s, w))| sized(i, *s, w, model)).collect())
}

/// A preset config: `case` on a uniform cluster.
pub fn case_config(case: u32, nodes: usize, gpus_per_node: usize) -> Option<RunConfig> {
    let synthetic = SynthModel { node_size: gpus_per_node as u32, ..SynthModel::default() };
    Some(RunConfig {
        nodes: NodesSpec::Uniform { count: nodes, gpus_per_node },
        tasks: case_tasks(case, &synthetic)?,
        cost_params: Default::default(),
        detection: Default::default(),
        synthetic,
        sim: Default::default(),
        calibration: None,
    })
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("calibration has no rows for task {0}")]
    MissingTask(TaskId),
}

/// Throughput tables for every task: from `calibration` rows when given,
/// otherwise synthesized up to the cluster size.
pub fn build_tasks(
    cfg: &RunConfig,
    calibration: Option<&BTreeMap<TaskId, Vec<CalibrationRow>>>,
) -> Result<Vec<TaskSpec>, WorkloadError> {
    let max_x = cfg.cluster().workers.len() as u32;
    cfg.tasks
        .iter()
        .map(|t| {
            let table = match calibration {
                Some(rows) => {
                    let rows = rows.get(&t.id).ok_or_else(|| WorkloadError::MissingTask(t.id.clone()))?;
                    ThroughputTable::from_rows(t.id.clone(), t.min_workers, rows)?
                }
                None => synthesize_table(t.id.clone(), t.model_size, t.min_workers, max_x, &cfg.synthetic),
            };
            Ok(TaskSpec {
                id: t.id.clone(),
                model_size: t.model_size,
                weight: t.weight,
                min_workers: t.min_workers,
                d_iter: t.d_iter,
                calibration: Arc::new(table),
            })
        })
        .collect()
}

/// Reads a calibration CSV from disk.
pub fn load_calibration(path: &std::path::Path) -> Result<BTreeMap<TaskId, Vec<CalibrationRow>>, TableError> {
    let file = std::fs::File::open(path).map_err(csv::Error::from)?;
    read_calibration(file)
}
