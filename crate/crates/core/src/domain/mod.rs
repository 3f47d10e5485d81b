//! Data model shared by every other module.
//!
//! Everything here is a plain value type. Once built, a [`ClusterState`],
//! [`TaskSpec`] or [`Plan`] is never mutated behind the caller's back, so
//! they can be shared freely between planner invocations and simulations.

mod cluster;
mod config;
mod event;
mod ids;
mod plan;
mod table;

pub use cluster::{validate_cluster, Assignment, ClusterState, Health, Node, Violation, Worker};
pub use config::{ConfigError, DetectionConfig, NodesSpec, RunConfig, SimCosts, SynthModel, TaskConfig};
pub use event::{DetectionSource, ErrorEvent, Severity, StatusKind, Subject, STATUS_TABLE};
pub use ids::{NodeId, TaskId, WorkerId};
pub use plan::{CostParams, Plan, TaskPlan};
pub use table::{
    read_calibration, table_lookup, write_calibration, Calibration, CalibrationRow, Layout, TableError, TaskSpec,
    ThroughputTable,
};
