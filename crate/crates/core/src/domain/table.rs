use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ids::TaskId;

/// Data, pipeline and tensor parallel degrees of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Layout {
    pub dp: u32,
    pub pp: u32,
    pub tp: u32,
}

impl Layout {
    pub const fn new(dp: u32, pp: u32, tp: u32) -> Self {
        Self { dp, pp, tp }
    }

    pub fn workers(&self) -> u32 {
        self.dp * self.pp * self.tp
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dp{}xpp{}xtp{}", self.dp, self.pp, self.tp)
    }
}

/// One calibrated point: achieved aggregate FLOP/s and the layout that got it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub flops: f64,
    pub layout: Layout,
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error("task {task}: x={x} has flops {flops}, expected a finite non-negative value")]
    BadFlops { task: TaskId, x: u32, flops: f64 },
    #[error("task {task}: layout {layout} has {} workers but row says x={x}", layout.workers())]
    LayoutMismatch { task: TaskId, x: u32, layout: Layout },
    #[error("task {task}: duplicate calibration row for x={x}")]
    Duplicate { task: TaskId, x: u32 },
    #[error("calibration csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Measured (or synthesized) achieved FLOP/s per worker count for one task.
///
/// Only calibrated worker counts exist as far as the planner is concerned;
/// there is no interpolation between rows. Values may be non-monotonic in
/// the worker count.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputTable {
    task: TaskId,
    min_workers: u32,
    entries: BTreeMap<u32, Calibration>,
}

impl ThroughputTable {
    pub fn new(task: TaskId, min_workers: u32) -> Self {
        Self { task, min_workers: min_workers.max(1), entries: BTreeMap::new() }
    }

    pub fn task(&self) -> &TaskId {
        &self.task
    }

    pub fn min_workers(&self) -> u32 {
        self.min_workers
    }

    pub fn insert(&mut self, x: u32, flops: f64, layout: Layout) -> Result<(), TableError> {
        if !flops.is_finite() || flops < 0.0 {
            return Err(TableError::BadFlops { task: self.task.clone(), x, flops });
        }
        if layout.workers() != x {
            return Err(TableError::LayoutMismatch { task: self.task.clone(), x, layout });
        }
        if self.entries.insert(x, Calibration { flops, layout }).is_some() {
            return Err(TableError::Duplicate { task: self.task.clone(), x });
        }
        Ok(())
    }

    pub fn get(&self, x: u32) -> Option<&Calibration> {
        if x < self.min_workers {
            return None;
        }
        self.entries.get(&x)
    }

    /// Every stored row, including rows below the minimum requirement.
    pub fn rows(&self) -> impl Iterator<Item = (u32, &Calibration)> + '_ {
        self.entries.iter().map(|(x, c)| (*x, c))
    }

    /// Worker counts the planner may choose (besides zero).
    pub fn schedulable(&self) -> impl Iterator<Item = (u32, &Calibration)> + '_ {
        self.entries.range(self.min_workers..).map(|(x, c)| (*x, c))
    }

    pub fn max_x(&self) -> u32 {
        self.entries.keys().next_back().copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_rows(&self) -> Vec<CalibrationRow> {
        self.entries
            .iter()
            .map(|(x, c)| CalibrationRow {
                task_id: self.task.clone(),
                x: *x,
                flops: c.flops,
                dp: c.layout.dp,
                pp: c.layout.pp,
                tp: c.layout.tp,
            })
            .collect()
    }
}

/// Achieved aggregate FLOP/s of `x` workers; zero below the minimum
/// requirement or at uncalibrated points.
pub fn table_lookup(tbl: &ThroughputTable, x: u32) -> f64 {
    tbl.get(x).map_or(0.0, |c| c.flops)
}

/// A training task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    /// Parameter count.
    pub model_size: f64,
    pub weight: f64,
    pub min_workers: u32,
    /// Nominal duration of one training iteration, seconds.
    pub d_iter: f64,
    pub calibration: Arc<ThroughputTable>,
}

/// One line of the calibration CSV (`task_id,x,flops,dp,pp,tp`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub task_id: TaskId,
    pub x: u32,
    pub flops: f64,
    pub dp: u32,
    pub pp: u32,
    pub tp: u32,
}

pub fn read_calibration<R: io::Read>(reader: R) -> Result<BTreeMap<TaskId, Vec<CalibrationRow>>, TableError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: BTreeMap<TaskId, Vec<CalibrationRow>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: CalibrationRow = row?;
        out.entry(row.task_id.clone()).or_default().push(row);
    }
    Ok(out)
}

pub fn write_calibration<'a, W, I>(writer: W, rows: I) -> Result<(), TableError>
where
    W: io::Write,
    I: IntoIterator<Item = &'a CalibrationRow>,
{
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

impl ThroughputTable {
    pub fn from_rows(task: TaskId, min_workers: u32, rows: &[CalibrationRow]) -> Result<Self, TableError> {
        let mut tbl = Self::new(task, min_workers);
        for r in rows {
            tbl.insert(r.x, r.flops, Layout::new(r.dp, r.pp, r.tp))?;
        }
        Ok(tbl)
    }
}
