//! Self-healing workload manager for multi-task LLM training clusters.
pub mod cli;
pub mod detection;
pub mod domain;
pub mod planner;
pub mod recovery;
pub mod simulator;
pub mod transition;
pub mod workload;
