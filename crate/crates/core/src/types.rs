//! Domain records for the durable-execution kernel.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Lifecycle of a workflow. Transitions only ever move `Pending` to one of
/// the two terminal states, never backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkflowStatus {
    Pending,
    Success,
    Error,
}

impl WorkflowStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            WorkflowStatus::Pending => "PENDING",
            WorkflowStatus::Success => "SUCCESS",
            WorkflowStatus::Error => "ERROR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "PENDING" => Some(WorkflowStatus::Pending),
            "SUCCESS" => Some(WorkflowStatus::Success),
            "ERROR" => Some(WorkflowStatus::Error),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, WorkflowStatus::Pending)
    }
}

/// Lifecycle of a step within a workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepStatus {
    Pending,
    Running,
    Success,
    Error,
}

impl StepStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepStatus::Pending => "PENDING",
            StepStatus::Running => "RUNNING",
            StepStatus::Success => "SUCCESS",
            StepStatus::Error => "ERROR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "PENDING" => Some(StepStatus::Pending),
            "RUNNING" => Some(StepStatus::Running),
            "SUCCESS" => Some(StepStatus::Success),
            "ERROR" => Some(StepStatus::Error),
            _ => None,
        }
    }
}

/// One durable workflow invocation.
///
/// `output_or_error` is opaque to the kernel: on SUCCESS it holds the value
/// the workflow function returned, on ERROR a JSON string with the failure
/// message. Queued child workflows additionally carry their parent id, the
/// queue they ran on, and their position in the parent's enqueue order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkflowRecord {
    pub workflow_id: String,
    pub name: String,
    pub input: Value,
    pub status: WorkflowStatus,
    pub output_or_error: Option<Value>,
    pub created_at_ms: i64,
    pub updated_at_ms: i64,
    pub executor_id: Option<String>,
    pub heartbeat_at_ms: i64,
    pub queue_name: Option<String>,
    pub parent_id: Option<String>,
    pub child_seq: Option<i64>,
}

impl WorkflowRecord {
    /// Recorded output, present only once the workflow reached SUCCESS.
    pub fn output(&self) -> Option<&Value> {
        match self.status {
            WorkflowStatus::Success => self.output_or_error.as_ref(),
            _ => None,
        }
    }

    /// Recorded failure message, present only once the workflow reached ERROR.
    pub fn error_message(&self) -> Option<String> {
        match self.status {
            WorkflowStatus::Error => self.output_or_error.as_ref().map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }),
            _ => None,
        }
    }
}

/// One durable step execution within a workflow, identified by call order.
///
/// `attempt_started_at_ms` records the wall-clock start of every attempt in
/// the current life, which makes retry backoff observable after the fact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub workflow_id: String,
    pub step_seq: i64,
    pub name: String,
    pub status: StepStatus,
    pub output_or_error: Option<Value>,
    pub attempts: u32,
    pub attempt_started_at_ms: Vec<i64>,
}

impl StepRecord {
    /// Recorded failure message, present only once the step reached ERROR.
    pub fn error_message(&self) -> Option<String> {
        match self.status {
            StepStatus::Error => self.output_or_error.as_ref().map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }),
            _ => None,
        }
    }
}

/// One claimable row of a durable queue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueEntry {
    pub entry_id: i64,
    pub queue_name: String,
    pub workflow_id: String,
    pub enqueued_at_ms: i64,
    pub claimed_by: Option<String>,
    pub claimed_at_ms: Option<i64>,
    pub heartbeat_at_ms: Option<i64>,
}

/// Tuning for one durable queue.
///
/// `concurrency` bounds claimed entries across every process sharing the
/// store; `worker_concurrency` bounds claims held by a single worker. `None`
/// means unbounded. Workers sleep `poll_interval_ms` between empty polls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueConfig {
    pub name: String,
    #[serde(default)]
    pub concurrency: Option<u32>,
    #[serde(default)]
    pub worker_concurrency: Option<u32>,
    #[serde(default = "default_poll_interval_ms")]
    pub poll_interval_ms: u64,
}

fn default_poll_interval_ms() -> u64 {
    1_000
}

impl QueueConfig {
    pub fn new(name: impl Into<String>) -> Self {
        QueueConfig {
            name: name.into(),
            concurrency: None,
            worker_concurrency: None,
            poll_interval_ms: default_poll_interval_ms(),
        }
    }

    pub fn with_concurrency(mut self, global: Option<u32>, per_worker: Option<u32>) -> Self {
        self.concurrency = global;
        self.worker_concurrency = per_worker;
        self
    }

    pub fn with_poll_interval_ms(mut self, ms: u64) -> Self {
        self.poll_interval_ms = ms;
        self
    }
}

/// Exponential-backoff retry schedule for steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_base_delay_ms")]
    pub base_delay_ms: u64,
    #[serde(default = "default_backoff_factor")]
    pub backoff_factor: f64,
    #[serde(default = "default_max_delay_ms")]
    pub max_delay_ms: u64,
}

fn default_max_attempts() -> u32 {
    3
}

fn default_base_delay_ms() -> u64 {
    500
}

fn default_backoff_factor() -> f64 {
    2.0
}

fn default_max_delay_ms() -> u64 {
    10_000
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: default_max_attempts(),
            base_delay_ms: default_base_delay_ms(),
            backoff_factor: default_backoff_factor(),
            max_delay_ms: default_max_delay_ms(),
        }
    }
}

impl RetryPolicy {
    /// Sleep inserted after attempt `k` (1-based) fails retryably:
    /// `min(base_delay * backoff_factor^(k-1), max_delay)`.
    pub fn delay_for_attempt(&self, k: u32) -> Duration {
        assert!(k >= 1, "attempt numbers are 1-based");
        let raw = self.base_delay_ms as f64 * self.backoff_factor.powi(k as i32 - 1);
        let capped = raw.min(self.max_delay_ms as f64);
        Duration::from_millis(capped.round() as u64)
    }
}

/// One persisted key/value event attached to a workflow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRecord {
    pub workflow_id: String,
    pub key: String,
    pub value: Value,
    pub version: i64,
    pub updated_at_ms: i64,
}

/// Result of inserting a workflow record that may already exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    /// Fresh row written.
    New,
    /// Row already present with the same name and input; nothing written.
    ExistingSameInput,
    /// Row already present with a different name or input.
    Conflict,
}

/// How a step body failed, as reported to the retry machinery.
#[derive(Debug, Clone)]
pub enum StepFailure {
    /// Transient; the step may be retried per its policy.
    Retryable(String),
    /// Definitive; retrying cannot help.
    Permanent(String),
}

impl StepFailure {
    pub fn message(&self) -> &str {
        match self {
            StepFailure::Retryable(m) | StepFailure::Permanent(m) => m,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, StepFailure::Retryable(_))
    }
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

/// A child workflow together with its first step, as seen by the parent.
///
/// Transfer-style parents enqueue one child per unit of work and poll this
/// view to build progress snapshots; the first step carries the attempt
/// counter and timing of the child's real work.
#[derive(Debug, Clone)]
pub struct ChildWorkflowState {
    pub workflow: WorkflowRecord,
    pub first_step: Option<StepRecord>,
}

/// A workflow that recovery could not resume, and why.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnrecoverableWorkflow {
    pub workflow_id: String,
    pub reason: String,
}

/// What a recovery pass did: queue claims released back to claimable,
/// direct workflows adopted and relaunched, and records it had to skip.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub released_claims: u64,
    pub adopted: Vec<String>,
    pub unrecoverable: Vec<UnrecoverableWorkflow>,
}

/// Reference to a started workflow.
#[derive(Debug, Clone)]
pub struct WorkflowHandle {
    pub workflow_id: String,
}
