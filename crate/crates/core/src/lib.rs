//! A minimal durable-execution kernel.
//!
//! Workflows are registered async functions whose every invocation is
//! recorded in an embedded SQLite store before it runs. Inside a workflow,
//! steps execute at least once and replay recorded outcomes instead of
//! re-executing; child workflows can be fanned out onto durable FIFO queues
//! with global and per-worker concurrency ceilings; key/value events persist
//! progress that outlives both the workflow and the process.
//!
//! Several processes on one host may open the same store concurrently.
//! Liveness is tracked by heartbeats; a crashed process's queue claims and
//! direct workflows are adopted by any surviving (or restarted) runtime once
//! their heartbeats go stale.

mod error;
mod runtime;
mod store;
mod types;

pub use error::{CoreError, CoreResult};
pub use runtime::{Runtime, RuntimeConfig, WorkflowCtx, WorkflowFn, now_ms};
pub use store::{NewWorkflow, SqliteStore};
pub use types::{
    ChildWorkflowState, EventRecord, InsertOutcome, QueueConfig, QueueEntry, RecoveryReport,
    RetryPolicy, StepFailure, StepRecord, StepStatus, UnrecoverableWorkflow, WorkflowHandle,
    WorkflowRecord, WorkflowStatus,
};
