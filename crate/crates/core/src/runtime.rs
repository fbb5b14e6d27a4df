//! Async runtime over the state store: registered workflow functions,
//! durable steps with retry, queue workers, heartbeats, and crash recovery.

use std::collections::HashMap;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::Arc;
use std::sync::atomic::{AtomicI64, Ordering};
use std::time::Duration;

use futures::FutureExt;
use futures::future::BoxFuture;
use parking_lot::{Mutex, RwLock};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tokio::sync::{Semaphore, watch};
use tokio::task::JoinHandle;

use crate::error::{CoreError, CoreResult};
use crate::store::{NewWorkflow, SqliteStore};
use crate::types::{
    ChildWorkflowState, EventRecord, InsertOutcome, QueueConfig, RecoveryReport, RetryPolicy,
    StepFailure, StepStatus, UnrecoverableWorkflow, WorkflowHandle, WorkflowRecord,
    WorkflowStatus,
};

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .expect("system clock before epoch")
        .as_millis() as i64
}

/// A registered workflow body: takes its context and input, returns the
/// workflow output or a failure message.
pub type WorkflowFn =
    Arc<dyn Fn(WorkflowCtx, Value) -> BoxFuture<'static, Result<Value, String>> + Send + Sync>;

/// Settings for one runtime instance.
#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub db_path: PathBuf,
    /// Stable identity of this process in the shared store. Defaults to a
    /// fresh UUID per instance.
    pub executor_id: Option<String>,
    /// How often liveness is written for owned work.
    pub heartbeat_interval_ms: u64,
    /// How long without a heartbeat before claims and direct workflows are
    /// considered orphaned.
    pub staleness_ms: u64,
}

impl RuntimeConfig {
    pub fn new(db_path: impl Into<PathBuf>) -> Self {
        RuntimeConfig {
            db_path: db_path.into(),
            executor_id: None,
            heartbeat_interval_ms: 2_000,
            staleness_ms: 10_000,
        }
    }
}

struct Inner {
    store: Arc<SqliteStore>,
    executor_id: String,
    heartbeat_interval_ms: u64,
    staleness_ms: u64,
    workflows: RwLock<HashMap<String, WorkflowFn>>,
    step_policies: RwLock<HashMap<String, RetryPolicy>>,
    queues: RwLock<HashMap<String, QueueConfig>>,
    tasks: Mutex<Vec<JoinHandle<()>>>,
    shutdown: watch::Sender<bool>,
}

impl Inner {
    /// Runs a store call on the blocking pool; SQLite may wait on the busy
    /// timeout and must not stall the async workers.
    async fn with_store<T, F>(&self, f: F) -> CoreResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&SqliteStore) -> CoreResult<T> + Send + 'static,
    {
        let store = self.store.clone();
        tokio::task::spawn_blocking(move || f(&store))
            .await
            .map_err(|e| CoreError::Internal {
                reason: format!("store task failed: {e}"),
            })?
    }
}

/// Durable-execution runtime. Cheap to clone; all clones share state.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<Inner>,
}

impl Runtime {
    /// Opens the store and prepares an idle runtime. Nothing executes until
    /// `start` is called.
    pub fn open(config: RuntimeConfig) -> CoreResult<Runtime> {
        let store = SqliteStore::open(&config.db_path)?;
        let (shutdown, _) = watch::channel(false);
        Ok(Runtime {
            inner: Arc::new(Inner {
                store: Arc::new(store),
                executor_id: config
                    .executor_id
                    .unwrap_or_else(|| uuid::Uuid::new_v4().to_string()),
                heartbeat_interval_ms: config.heartbeat_interval_ms,
                staleness_ms: config.staleness_ms,
                workflows: RwLock::new(HashMap::new()),
                step_policies: RwLock::new(HashMap::new()),
                queues: RwLock::new(HashMap::new()),
                tasks: Mutex::new(Vec::new()),
                shutdown,
            }),
        })
    }

    pub fn executor_id(&self) -> &str {
        &self.inner.executor_id
    }

    pub fn store(&self) -> Arc<SqliteStore> {
        self.inner.store.clone()
    }

    /// Registers a workflow body under a name. Recovery can only resume
    /// workflows whose names are registered.
    pub fn register_workflow<F>(&self, name: &str, f: F)
    where
        F: Fn(WorkflowCtx, Value) -> BoxFuture<'static, Result<Value, String>>
            + Send
            + Sync
            + 'static,
    {
        self.inner
            .workflows
            .write()
            .insert(name.to_string(), Arc::new(f));
    }

    /// Associates a retry policy with a step name. Steps without one use
    /// `RetryPolicy::default()`.
    pub fn register_step(&self, name: &str, policy: RetryPolicy) {
        self.inner
            .step_policies
            .write()
            .insert(name.to_string(), policy);
    }

    /// Declares a durable queue this runtime should poll for work.
    pub fn create_queue(&self, config: QueueConfig) -> CoreResult<()> {
        if config.concurrency == Some(0) || config.worker_concurrency == Some(0) {
            return Err(CoreError::InvalidConfig {
                reason: format!("queue {}: concurrency limits must be positive", config.name),
            });
        }
        if let (Some(global), Some(per_worker)) = (config.concurrency, config.worker_concurrency) {
            if per_worker > global {
                return Err(CoreError::InvalidConfig {
                    reason: format!(
                        "queue {}: worker_concurrency {per_worker} exceeds concurrency {global}",
                        config.name
                    ),
                });
            }
        }
        self.inner
            .queues
            .write()
            .insert(config.name.clone(), config);
        Ok(())
    }

    /// Brings the runtime live: heartbeats, one immediate recovery pass
    /// (whose report is returned), a periodic recovery scan, and one worker
    /// loop per declared queue.
    pub async fn start(&self) -> CoreResult<RecoveryReport> {
        let mut tasks = Vec::new();
        tasks.push(tokio::spawn(heartbeat_loop(self.inner.clone())));
        let report = self.recover_pending().await?;
        tasks.push(tokio::spawn(recovery_loop(self.clone())));
        for config in self.inner.queues.read().values().cloned() {
            tasks.push(tokio::spawn(queue_worker(self.inner.clone(), config)));
        }
        self.inner.tasks.lock().extend(tasks);
        Ok(report)
    }

    /// Stops background loops. In-flight workflow bodies are not interrupted
    /// mid-await; whatever they persist stays consistent.
    pub fn shutdown(&self) {
        let _ = self.inner.shutdown.send(true);
        for task in self.inner.tasks.lock().drain(..) {
            task.abort();
        }
    }

    /// One recovery pass: stale queue claims go back to claimable, stale
    /// direct PENDING workflows are adopted (exactly once across racing
    /// recoverers) and relaunched.
    pub async fn recover_pending(&self) -> CoreResult<RecoveryReport> {
        let staleness = self.inner.staleness_ms;
        let released = self
            .inner
            .with_store(move |s| s.release_stale_claims(staleness, now_ms()))
            .await?;
        let stale = self
            .inner
            .with_store(move |s| s.list_stale_direct_pending(staleness, now_ms()))
            .await?;
        let mut report = RecoveryReport {
            released_claims: released,
            ..Default::default()
        };
        for wf in stale {
            if !self.inner.workflows.read().contains_key(&wf.name) {
                report.unrecoverable.push(UnrecoverableWorkflow {
                    workflow_id: wf.workflow_id.clone(),
                    reason: format!("no workflow named {} is registered", wf.name),
                });
                continue;
            }
            let id = wf.workflow_id.clone();
            let me = self.inner.executor_id.clone();
            let adopted = self
                .inner
                .with_store(move |s| s.adopt_workflow(&id, &me, staleness, now_ms()))
                .await?;
            if adopted {
                report.adopted.push(wf.workflow_id.clone());
                let inner = self.inner.clone();
                let handle = tokio::spawn(async move {
                    run_direct(inner, wf).await;
                });
                self.inner.tasks.lock().push(handle);
            }
        }
        Ok(report)
    }

    /// Durably records a new workflow and launches it. Resubmitting an
    /// identical (id, name, input) returns the same handle without a second
    /// execution; a mismatched resubmission is a conflict.
    pub async fn start_workflow(
        &self,
        name: &str,
        input: Value,
        workflow_id: Option<String>,
    ) -> CoreResult<WorkflowHandle> {
        if !self.inner.workflows.read().contains_key(name) {
            return Err(CoreError::UnknownWorkflowName {
                name: name.to_string(),
            });
        }
        let id = workflow_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        let created_at_ms = now_ms();
        let me = self.inner.executor_id.clone();
        let outcome = {
            let (id, name, input) = (id.clone(), name.to_string(), input.clone());
            self.inner
                .with_store(move |s| {
                    s.insert_workflow(
                        &NewWorkflow {
                            workflow_id: &id,
                            name: &name,
                            input: &input,
                            queue_name: None,
                            parent_id: None,
                            child_seq: None,
                            executor_id: Some(&me),
                        },
                        created_at_ms,
                    )
                })
                .await?
        };
        match outcome {
            InsertOutcome::New => {
                let wf = WorkflowRecord {
                    workflow_id: id.clone(),
                    name: name.to_string(),
                    input,
                    status: WorkflowStatus::Pending,
                    output_or_error: None,
                    created_at_ms,
                    updated_at_ms: created_at_ms,
                    executor_id: Some(self.inner.executor_id.clone()),
                    heartbeat_at_ms: created_at_ms,
                    queue_name: None,
                    parent_id: None,
                    child_seq: None,
                };
                let inner = self.inner.clone();
                let handle = tokio::spawn(async move {
                    run_direct(inner, wf).await;
                });
                self.inner.tasks.lock().push(handle);
            }
            InsertOutcome::ExistingSameInput => {}
            InsertOutcome::Conflict => return Err(CoreError::Conflict { workflow_id: id }),
        }
        Ok(WorkflowHandle { workflow_id: id })
    }

    pub async fn get_workflow(&self, workflow_id: &str) -> CoreResult<Option<WorkflowRecord>> {
        let id = workflow_id.to_string();
        self.inner.with_store(move |s| s.get_workflow(&id)).await
    }

    /// Polls until the workflow reaches a terminal status.
    pub async fn wait_for_workflow(
        &self,
        workflow_id: &str,
        poll_ms: u64,
    ) -> CoreResult<WorkflowRecord> {
        loop {
            let rec = self.get_workflow(workflow_id).await?.ok_or_else(|| {
                CoreError::UnknownWorkflow {
                    workflow_id: workflow_id.to_string(),
                }
            })?;
            if rec.status.is_terminal() {
                return Ok(rec);
            }
            tokio::time::sleep(Duration::from_millis(poll_ms)).await;
        }
    }

    pub async fn set_event(
        &self,
        workflow_id: &str,
        key: &str,
        value: Value,
    ) -> CoreResult<i64> {
        let (id, key) = (workflow_id.to_string(), key.to_string());
        self.inner
            .with_store(move |s| s.set_event(&id, &key, &value, now_ms()))
            .await
    }

    pub async fn get_event(
        &self,
        workflow_id: &str,
        key: &str,
    ) -> CoreResult<Option<EventRecord>> {
        let (id, key) = (workflow_id.to_string(), key.to_string());
        self.inner.with_store(move |s| s.get_event(&id, &key)).await
    }

    pub async fn list_children(&self, workflow_id: &str) -> CoreResult<Vec<ChildWorkflowState>> {
        let id = workflow_id.to_string();
        self.inner.with_store(move |s| s.list_children(&id)).await
    }
}

/// Per-execution context handed to workflow bodies.
#[derive(Clone)]
pub struct WorkflowCtx {
    inner: Arc<Inner>,
    pub workflow_id: String,
    pub created_at_ms: i64,
    step_seq: Arc<AtomicI64>,
    child_seq: Arc<AtomicI64>,
}

impl WorkflowCtx {
    fn new(inner: Arc<Inner>, workflow_id: String, created_at_ms: i64) -> Self {
        WorkflowCtx {
            inner,
            workflow_id,
            created_at_ms,
            step_seq: Arc::new(AtomicI64::new(0)),
            child_seq: Arc::new(AtomicI64::new(0)),
        }
    }

    /// Runs one durable step. Steps are identified by call order, so a
    /// workflow body must invoke its steps deterministically. A step with a
    /// recorded terminal outcome replays it without executing the body;
    /// otherwise the body runs under the step's retry policy, and the
    /// outcome is persisted before this returns.
    pub async fn run_step<F>(&self, name: &str, mut body: F) -> Result<Value, String>
    where
        F: FnMut() -> BoxFuture<'static, Result<Value, StepFailure>> + Send,
    {
        let seq = self.step_seq.fetch_add(1, Ordering::SeqCst);
        let prior = {
            let (id, seq) = (self.workflow_id.clone(), seq);
            self.inner
                .with_store(move |s| s.get_step(&id, seq))
                .await
                .map_err(|e| e.to_string())?
        };
        if let Some(rec) = prior {
            match rec.status {
                StepStatus::Success => return Ok(rec.output_or_error.unwrap_or(Value::Null)),
                StepStatus::Error => {
                    return Err(rec
                        .error_message()
                        .unwrap_or_else(|| "step failed".to_string()));
                }
                _ => {}
            }
        }
        let policy = self
            .inner
            .step_policies
            .read()
            .get(name)
            .cloned()
            .unwrap_or_default();
        loop {
            let rec = {
                let (id, name) = (self.workflow_id.clone(), name.to_string());
                self.inner
                    .with_store(move |s| s.begin_step_attempt(&id, seq, &name, now_ms()))
                    .await
                    .map_err(|e| e.to_string())?
            };
            let attempt = rec.attempts;
            match body().await {
                Ok(output) => {
                    let (id, out) = (self.workflow_id.clone(), output.clone());
                    self.inner
                        .with_store(move |s| {
                            s.finish_step(&id, seq, StepStatus::Success, Some(&out))
                        })
                        .await
                        .map_err(|e| e.to_string())?;
                    return Ok(output);
                }
                Err(failure) => {
                    let exhausted = attempt >= policy.max_attempts;
                    if !failure.is_retryable() || exhausted {
                        let message = failure.message().to_string();
                        let (id, payload) =
                            (self.workflow_id.clone(), Value::String(message.clone()));
                        self.inner
                            .with_store(move |s| {
                                s.finish_step(&id, seq, StepStatus::Error, Some(&payload))
                            })
                            .await
                            .map_err(|e| e.to_string())?;
                        return Err(message);
                    }
                    tracing::debug!(
                        workflow_id = %self.workflow_id,
                        step = name,
                        attempt,
                        error = failure.message(),
                        "step attempt failed; backing off"
                    );
                    tokio::time::sleep(policy.delay_for_attempt(attempt)).await;
                }
            }
        }
    }

    /// Enqueues a child workflow on a durable queue and returns its handle
    /// immediately. Child ids derive deterministically from this workflow's
    /// id and the enqueue sequence, so re-executions of the body reuse the
    /// same children instead of spawning duplicates.
    pub async fn enqueue(
        &self,
        queue_name: &str,
        step_name: &str,
        input: Value,
    ) -> CoreResult<WorkflowHandle> {
        if !self.inner.queues.read().contains_key(queue_name) {
            return Err(CoreError::UnknownQueue {
                name: queue_name.to_string(),
            });
        }
        let seq = self.child_seq.fetch_add(1, Ordering::SeqCst);
        let child_id = derive_child_id(&self.workflow_id, queue_name, step_name, seq);
        let outcome = {
            let (parent, queue, child, name) = (
                self.workflow_id.clone(),
                queue_name.to_string(),
                child_id.clone(),
                step_name.to_string(),
            );
            self.inner
                .with_store(move |s| {
                    s.enqueue_child(&parent, &queue, &child, &name, &input, seq, now_ms())
                })
                .await?
        };
        if outcome == InsertOutcome::Conflict {
            return Err(CoreError::Conflict {
                workflow_id: child_id,
            });
        }
        Ok(WorkflowHandle {
            workflow_id: child_id,
        })
    }

    /// Persists an event on this workflow; returns the new version.
    pub async fn set_event(&self, key: &str, value: Value) -> CoreResult<i64> {
        let (id, key) = (self.workflow_id.clone(), key.to_string());
        self.inner
            .with_store(move |s| s.set_event(&id, &key, &value, now_ms()))
            .await
    }

    /// Reads back an event on this workflow.
    pub async fn get_event(&self, key: &str) -> CoreResult<Option<EventRecord>> {
        let (id, key) = (self.workflow_id.clone(), key.to_string());
        self.inner.with_store(move |s| s.get_event(&id, &key)).await
    }

    /// Snapshot of this workflow's children in enqueue order.
    pub async fn children(&self) -> CoreResult<Vec<ChildWorkflowState>> {
        let id = self.workflow_id.clone();
        self.inner.with_store(move |s| s.list_children(&id)).await
    }
}

/// Deterministic child workflow id: a UUID carved out of
/// sha256(parent, queue, step, seq).
fn derive_child_id(parent_id: &str, queue_name: &str, step_name: &str, seq: i64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(parent_id.as_bytes());
    hasher.update([0]);
    hasher.update(queue_name.as_bytes());
    hasher.update([0]);
    hasher.update(step_name.as_bytes());
    hasher.update([0]);
    hasher.update(seq.to_be_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    uuid::Builder::from_sha1_bytes(bytes).into_uuid().to_string()
}

fn outcome_parts(result: Result<Value, String>) -> (WorkflowStatus, Option<Value>) {
    match result {
        Ok(v) => (WorkflowStatus::Success, Some(v)),
        Err(m) => (WorkflowStatus::Error, Some(Value::String(m))),
    }
}

/// Executes a workflow body, shielding the caller from panics.
async fn execute_body(inner: &Arc<Inner>, wf: &WorkflowRecord) -> Result<Value, String> {
    let body = inner.workflows.read().get(&wf.name).cloned();
    match body {
        Some(f) => {
            let ctx = WorkflowCtx::new(inner.clone(), wf.workflow_id.clone(), wf.created_at_ms);
            AssertUnwindSafe(f(ctx, wf.input.clone()))
                .catch_unwind()
                .await
                .unwrap_or_else(|_| Err(format!("workflow {} panicked", wf.workflow_id)))
        }
        None => Err(format!("no workflow named {} is registered", wf.name)),
    }
}

/// Runs a direct (non-queued) workflow to completion and records the result.
async fn run_direct(inner: Arc<Inner>, wf: WorkflowRecord) {
    let result = execute_body(&inner, &wf).await;
    let (status, payload) = outcome_parts(result);
    let id = wf.workflow_id.clone();
    let finished = inner
        .with_store(move |s| s.finish_workflow(&id, status, payload.as_ref(), now_ms()))
        .await;
    match finished {
        Ok(_) => {}
        Err(e) => tracing::error!(
            workflow_id = %wf.workflow_id,
            error = %e,
            "failed to record workflow outcome"
        ),
    }
}

/// Runs a claimed queued workflow and releases its entry with the result.
async fn run_claimed(inner: Arc<Inner>, wf: WorkflowRecord) {
    let result = execute_body(&inner, &wf).await;
    let (status, payload) = outcome_parts(result);
    let id = wf.workflow_id.clone();
    let finished = inner
        .with_store(move |s| s.finalize_queued(&id, status, payload.as_ref(), now_ms()))
        .await;
    match finished {
        Ok(_) => {}
        Err(e) => tracing::error!(
            workflow_id = %wf.workflow_id,
            error = %e,
            "failed to finalize queued workflow"
        ),
    }
}

/// Periodically refreshes liveness of everything this executor owns.
async fn heartbeat_loop(inner: Arc<Inner>) {
    let mut shutdown = inner.shutdown.subscribe();
    loop {
        if *shutdown.borrow() {
            break;
        }
        let me = inner.executor_id.clone();
        if let Err(e) = inner.with_store(move |s| s.heartbeat(&me, now_ms())).await {
            tracing::warn!(error = %e, "heartbeat write failed");
        }
        tokio::select! {
            _ = tokio::time::sleep(Duration::from_millis(inner.heartbeat_interval_ms)) => {}
            _ = shutdown.changed() => {}
        }
    }
}

/// Periodically rescans for orphaned work so crashes elsewhere on the host
/// are eventually picked up, not just at startup.
async fn recovery_loop(runtime: Runtime) {
    let mut shutdown = runtime.inner.shutdown.subscribe();
    let interval = (runtime.inner.staleness_ms / 2).max(1_000);
    loop {
        tokio::select! {
            _ = tokio::time::sleep(Duration::from_millis(interval)) => {}
            _ = shutdown.changed() => {}
        }
        if *shutdown.borrow() {
            break;
        }
        match runtime.recover_pending().await {
            Ok(report) if !report.adopted.is_empty() || report.released_claims > 0 => {
                tracing::info!(
                    adopted = report.adopted.len(),
                    released = report.released_claims,
                    "recovery pass picked up orphaned work"
                );
            }
            Ok(_) => {}
            Err(e) => tracing::warn!(error = %e, "recovery pass failed"),
        }
    }
}

/// Polls one queue for claimable entries and runs them, bounded by the
/// per-worker concurrency in-process and by the store-side counts globally.
async fn queue_worker(inner: Arc<Inner>, config: QueueConfig) {
    let mut shutdown = inner.shutdown.subscribe();
    let permits = config
        .worker_concurrency
        .map(|c| c as usize)
        .unwrap_or(Semaphore::MAX_PERMITS);
    let sem = Arc::new(Semaphore::new(permits));
    loop {
        if *shutdown.borrow() {
            break;
        }
        let Ok(permit) = sem.clone().acquire_owned().await else {
            break;
        };
        let claim = {
            let queue = config.name.clone();
            let me = inner.executor_id.clone();
            let (global, per_worker) = (config.concurrency, config.worker_concurrency);
            inner
                .with_store(move |s| s.claim_next(&queue, &me, global, per_worker, now_ms()))
                .await
        };
        match claim {
            Ok(Some(wf)) => {
                let inner = inner.clone();
                tokio::spawn(async move {
                    run_claimed(inner, wf).await;
                    drop(permit);
                });
            }
            Ok(None) => {
                drop(permit);
                tokio::select! {
                    _ = tokio::time::sleep(Duration::from_millis(config.poll_interval_ms)) => {}
                    _ = shutdown.changed() => {}
                }
            }
            Err(e) => {
                drop(permit);
                tracing::error!(queue = %config.name, error = %e, "queue poll failed");
                tokio::time::sleep(Duration::from_millis(config.poll_interval_ms)).await;
            }
        }
    }
}
