//! Moving a task from one configuration to the next.
//!
//! [`gradient`] holds a deterministic integer gradient engine that makes
//! mid-iteration resumption checkable bit for bit. [`migration`] picks the
//! cheapest source for every worker's training state and models the
//! recomputation a failure costs.

pub mod gradient;
pub mod migration;
pub mod verify;

pub use gradient::{
    digest, micro_batch_gradient, redistribute, resume, resume_scenario1, resume_scenario2, run_iteration,
    segment_bounds, GradientState, IterationLayout, TransitionError, DEFAULT_DIMS,
};
pub use migration::{
    plan_migration, recomputation_cost, MigrationError, MigrationPlan, MigrationRequest, RecomputePolicy, StateSource,
    WorkerMigration, REDUCE_FRACTION,
};
pub use verify::{run_sweep, sweep_grid, verify_case, FailurePoint, SweepReport, Verdict, VerifyCase};
