//! SQLite-backed persistence for workflows, steps, queue entries, and events.
//!
//! One store maps to one database file. Every process on the host opens its
//! own store over the same file; WAL mode plus a busy timeout makes the
//! multi-writer case safe, and immediate transactions make compound
//! operations (claims, enqueues, version bumps) atomic across processes.

use std::path::{Path, PathBuf};
use std::time::Duration;

use parking_lot::Mutex;
use rusqlite::types::Type;
use rusqlite::{Connection, OptionalExtension, Row, TransactionBehavior, params};
use serde_json::Value;

use crate::error::{CoreError, CoreResult};
use crate::types::{
    ChildWorkflowState, EventRecord, InsertOutcome, QueueEntry, StepRecord, StepStatus,
    WorkflowRecord, WorkflowStatus,
};

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS workflows (
    workflow_id     TEXT PRIMARY KEY,
    name            TEXT NOT NULL,
    input           TEXT NOT NULL,
    status          TEXT NOT NULL,
    output_or_error TEXT,
    created_at_ms   INTEGER NOT NULL,
    updated_at_ms   INTEGER NOT NULL,
    executor_id     TEXT,
    heartbeat_at_ms INTEGER NOT NULL,
    queue_name      TEXT,
    parent_id       TEXT,
    child_seq       INTEGER
);
CREATE INDEX IF NOT EXISTS idx_workflows_parent ON workflows(parent_id, child_seq);
CREATE INDEX IF NOT EXISTS idx_workflows_status ON workflows(status, queue_name);

CREATE TABLE IF NOT EXISTS steps (
    workflow_id           TEXT NOT NULL,
    step_seq              INTEGER NOT NULL,
    name                  TEXT NOT NULL,
    status                TEXT NOT NULL,
    output_or_error       TEXT,
    attempts              INTEGER NOT NULL DEFAULT 0,
    attempt_started_at_ms TEXT NOT NULL DEFAULT '[]',
    PRIMARY KEY (workflow_id, step_seq)
);

CREATE TABLE IF NOT EXISTS queue_entries (
    entry_id        INTEGER PRIMARY KEY AUTOINCREMENT,
    queue_name      TEXT NOT NULL,
    workflow_id     TEXT NOT NULL UNIQUE,
    enqueued_at_ms  INTEGER NOT NULL,
    claimed_by      TEXT,
    claimed_at_ms   INTEGER,
    heartbeat_at_ms INTEGER
);
CREATE INDEX IF NOT EXISTS idx_queue_fifo ON queue_entries(queue_name, entry_id);

CREATE TABLE IF NOT EXISTS events (
    workflow_id   TEXT NOT NULL,
    key           TEXT NOT NULL,
    value         TEXT NOT NULL,
    version       INTEGER NOT NULL,
    updated_at_ms INTEGER NOT NULL,
    PRIMARY KEY (workflow_id, key)
);
";

const WF_COLS: &str = "workflow_id, name, input, status, output_or_error, created_at_ms, \
                       updated_at_ms, executor_id, heartbeat_at_ms, queue_name, parent_id, \
                       child_seq";

const STEP_COLS: &str = "workflow_id, step_seq, name, status, output_or_error, attempts, \
                         attempt_started_at_ms";

/// Fields of a workflow row to be inserted.
#[derive(Debug, Clone)]
pub struct NewWorkflow<'a> {
    pub workflow_id: &'a str,
    pub name: &'a str,
    pub input: &'a Value,
    pub queue_name: Option<&'a str>,
    pub parent_id: Option<&'a str>,
    pub child_seq: Option<i64>,
    pub executor_id: Option<&'a str>,
}

/// Handle to the shared database file.
pub struct SqliteStore {
    conn: Mutex<Connection>,
    path: PathBuf,
}

fn json_col(row: &Row<'_>, idx: usize) -> rusqlite::Result<Value> {
    let text: String = row.get(idx)?;
    serde_json::from_str(&text)
        .map_err(|e| rusqlite::Error::FromSqlConversionFailure(idx, Type::Text, Box::new(e)))
}

fn opt_json_col(row: &Row<'_>, idx: usize) -> rusqlite::Result<Option<Value>> {
    let text: Option<String> = row.get(idx)?;
    match text {
        None => Ok(None),
        Some(t) => serde_json::from_str(&t)
            .map(Some)
            .map_err(|e| rusqlite::Error::FromSqlConversionFailure(idx, Type::Text, Box::new(e))),
    }
}

fn status_col(row: &Row<'_>, idx: usize) -> rusqlite::Result<WorkflowStatus> {
    let text: String = row.get(idx)?;
    WorkflowStatus::parse(&text).ok_or_else(|| {
        rusqlite::Error::FromSqlConversionFailure(
            idx,
            Type::Text,
            format!("bad workflow status {text:?}").into(),
        )
    })
}

fn map_workflow(row: &Row<'_>) -> rusqlite::Result<WorkflowRecord> {
    Ok(WorkflowRecord {
        workflow_id: row.get(0)?,
        name: row.get(1)?,
        input: json_col(row, 2)?,
        status: status_col(row, 3)?,
        output_or_error: opt_json_col(row, 4)?,
        created_at_ms: row.get(5)?,
        updated_at_ms: row.get(6)?,
        executor_id: row.get(7)?,
        heartbeat_at_ms: row.get(8)?,
        queue_name: row.get(9)?,
        parent_id: row.get(10)?,
        child_seq: row.get(11)?,
    })
}

fn map_step(row: &Row<'_>) -> rusqlite::Result<StepRecord> {
    let status_text: String = row.get(3)?;
    let status = StepStatus::parse(&status_text).ok_or_else(|| {
        rusqlite::Error::FromSqlConversionFailure(
            3,
            Type::Text,
            format!("bad step status {status_text:?}").into(),
        )
    })?;
    let starts_text: String = row.get(6)?;
    let attempt_started_at_ms: Vec<i64> = serde_json::from_str(&starts_text)
        .map_err(|e| rusqlite::Error::FromSqlConversionFailure(6, Type::Text, Box::new(e)))?;
    Ok(StepRecord {
        workflow_id: row.get(0)?,
        step_seq: row.get(1)?,
        name: row.get(2)?,
        status,
        output_or_error: opt_json_col(row, 4)?,
        attempts: row.get(5)?,
        attempt_started_at_ms,
    })
}

fn map_entry(row: &Row<'_>) -> rusqlite::Result<QueueEntry> {
    Ok(QueueEntry {
        entry_id: row.get(0)?,
        queue_name: row.get(1)?,
        workflow_id: row.get(2)?,
        enqueued_at_ms: row.get(3)?,
        claimed_by: row.get(4)?,
        claimed_at_ms: row.get(5)?,
        heartbeat_at_ms: row.get(6)?,
    })
}

/// Compares the stored (name, input) pair against an insert candidate.
fn same_submission(
    stored_name: &str,
    stored_input: &str,
    name: &str,
    input: &Value,
) -> CoreResult<bool> {
    if stored_name != name {
        return Ok(false);
    }
    let stored: Value = serde_json::from_str(stored_input)?;
    Ok(&stored == input)
}

impl SqliteStore {
    /// Opens (creating if needed) the database at `path` and ensures the
    /// schema exists.
    pub fn open(path: impl AsRef<Path>) -> CoreResult<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let conn = Connection::open(&path)?;
        conn.busy_timeout(Duration::from_secs(5))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(SqliteStore {
            conn: Mutex::new(conn),
            path,
        })
    }

    /// Database file backing this store.
    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Inserts a PENDING workflow row, treating an exact resubmission as a
    /// no-op and a changed one as a conflict.
    pub fn insert_workflow(&self, w: &NewWorkflow<'_>, now_ms: i64) -> CoreResult<InsertOutcome> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let existing: Option<(String, String)> = tx
            .query_row(
                "SELECT name, input FROM workflows WHERE workflow_id = ?1",
                params![w.workflow_id],
                |row| Ok((row.get(0)?, row.get(1)?)),
            )
            .optional()?;
        let outcome = match existing {
            Some((name, input)) => {
                if same_submission(&name, &input, w.name, w.input)? {
                    InsertOutcome::ExistingSameInput
                } else {
                    InsertOutcome::Conflict
                }
            }
            None => {
                tx.execute(
                    "INSERT INTO workflows (workflow_id, name, input, status, created_at_ms, \
                     updated_at_ms, executor_id, heartbeat_at_ms, queue_name, parent_id, \
                     child_seq) VALUES (?1, ?2, ?3, 'PENDING', ?4, ?4, ?5, ?4, ?6, ?7, ?8)",
                    params![
                        w.workflow_id,
                        w.name,
                        serde_json::to_string(w.input)?,
                        now_ms,
                        w.executor_id,
                        w.queue_name,
                        w.parent_id,
                        w.child_seq,
                    ],
                )?;
                InsertOutcome::New
            }
        };
        tx.commit()?;
        Ok(outcome)
    }

    pub fn get_workflow(&self, workflow_id: &str) -> CoreResult<Option<WorkflowRecord>> {
        let conn = self.conn.lock();
        let rec = conn
            .query_row(
                &format!("SELECT {WF_COLS} FROM workflows WHERE workflow_id = ?1"),
                params![workflow_id],
                map_workflow,
            )
            .optional()?;
        Ok(rec)
    }

    /// Moves a workflow out of PENDING. Returns false (and writes nothing)
    /// if some other life already finished it.
    pub fn finish_workflow(
        &self,
        workflow_id: &str,
        status: WorkflowStatus,
        outcome: Option<&Value>,
        now_ms: i64,
    ) -> CoreResult<bool> {
        debug_assert!(status.is_terminal());
        let payload = outcome.map(serde_json::to_string).transpose()?;
        let conn = self.conn.lock();
        let rows = conn.execute(
            "UPDATE workflows SET status = ?1, output_or_error = ?2, updated_at_ms = ?3 \
             WHERE workflow_id = ?4 AND status = 'PENDING'",
            params![status.as_str(), payload, now_ms, workflow_id],
        )?;
        Ok(rows == 1)
    }

    /// Refreshes liveness for everything `executor_id` currently owns:
    /// direct PENDING workflows and claimed queue entries.
    pub fn heartbeat(&self, executor_id: &str, now_ms: i64) -> CoreResult<()> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        tx.execute(
            "UPDATE workflows SET heartbeat_at_ms = ?1 \
             WHERE executor_id = ?2 AND status = 'PENDING'",
            params![now_ms, executor_id],
        )?;
        tx.execute(
            "UPDATE queue_entries SET heartbeat_at_ms = ?1 WHERE claimed_by = ?2",
            params![now_ms, executor_id],
        )?;
        tx.commit()?;
        Ok(())
    }

    /// Atomically records a child workflow and its queue entry. Re-runs of
    /// the same enqueue are no-ops; a terminal child never regains an entry.
    pub fn enqueue_child(
        &self,
        parent_id: &str,
        queue_name: &str,
        child_id: &str,
        name: &str,
        input: &Value,
        child_seq: i64,
        now_ms: i64,
    ) -> CoreResult<InsertOutcome> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let existing: Option<(String, String, String)> = tx
            .query_row(
                "SELECT name, input, status FROM workflows WHERE workflow_id = ?1",
                params![child_id],
                |row| Ok((row.get(0)?, row.get(1)?, row.get(2)?)),
            )
            .optional()?;
        let (outcome, status) = match existing {
            Some((stored_name, stored_input, status)) => {
                if same_submission(&stored_name, &stored_input, name, input)? {
                    (InsertOutcome::ExistingSameInput, status)
                } else {
                    (InsertOutcome::Conflict, status)
                }
            }
            None => {
                tx.execute(
                    "INSERT INTO workflows (workflow_id, name, input, status, created_at_ms, \
                     updated_at_ms, heartbeat_at_ms, queue_name, parent_id, child_seq) \
                     VALUES (?1, ?2, ?3, 'PENDING', ?4, ?4, ?4, ?5, ?6, ?7)",
                    params![
                        child_id,
                        name,
                        serde_json::to_string(input)?,
                        now_ms,
                        queue_name,
                        parent_id,
                        child_seq,
                    ],
                )?;
                (InsertOutcome::New, "PENDING".to_string())
            }
        };
        if outcome != InsertOutcome::Conflict && status == "PENDING" {
            tx.execute(
                "INSERT OR IGNORE INTO queue_entries (queue_name, workflow_id, enqueued_at_ms) \
                 VALUES (?1, ?2, ?3)",
                params![queue_name, child_id, now_ms],
            )?;
        }
        tx.commit()?;
        Ok(outcome)
    }

    /// Children of `parent_id` in enqueue order, each with its first step.
    pub fn list_children(&self, parent_id: &str) -> CoreResult<Vec<ChildWorkflowState>> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(&format!(
            "SELECT {wf}, s.workflow_id, s.step_seq, s.name, s.status, s.output_or_error, \
             s.attempts, s.attempt_started_at_ms \
             FROM workflows w LEFT JOIN steps s \
             ON s.workflow_id = w.workflow_id AND s.step_seq = 0 \
             WHERE w.parent_id = ?1 ORDER BY w.child_seq",
            wf = WF_COLS
                .split(", ")
                .map(|c| format!("w.{c}"))
                .collect::<Vec<_>>()
                .join(", "),
        ))?;
        let rows = stmt.query_map(params![parent_id], |row| {
            let workflow = map_workflow(row)?;
            let has_step: Option<String> = row.get(12)?;
            let first_step = match has_step {
                None => None,
                Some(_) => {
                    let status_text: String = row.get(15)?;
                    let status = StepStatus::parse(&status_text).ok_or_else(|| {
                        rusqlite::Error::FromSqlConversionFailure(
                            15,
                            Type::Text,
                            format!("bad step status {status_text:?}").into(),
                        )
                    })?;
                    let starts_text: String = row.get(18)?;
                    let attempt_started_at_ms: Vec<i64> = serde_json::from_str(&starts_text)
                        .map_err(|e| {
                            rusqlite::Error::FromSqlConversionFailure(18, Type::Text, Box::new(e))
                        })?;
                    Some(StepRecord {
                        workflow_id: row.get(12)?,
                        step_seq: row.get(13)?,
                        name: row.get(14)?,
                        status,
                        output_or_error: opt_json_col(row, 16)?,
                        attempts: row.get(17)?,
                        attempt_started_at_ms,
                    })
                }
            };
            Ok(ChildWorkflowState {
                workflow,
                first_step,
            })
        })?;
        let mut out = Vec::new();
        for row in rows {
            out.push(row?);
        }
        Ok(out)
    }

    /// Claims the oldest unclaimed entry of `queue_name` for `worker_id`,
    /// honoring the global and per-worker concurrency ceilings. The claim,
    /// ownership transfer, and new-life attempt reset commit atomically.
    pub fn claim_next(
        &self,
        queue_name: &str,
        worker_id: &str,
        concurrency: Option<u32>,
        worker_concurrency: Option<u32>,
        now_ms: i64,
    ) -> CoreResult<Option<WorkflowRecord>> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        if let Some(global) = concurrency {
            let claimed: u32 = tx.query_row(
                "SELECT COUNT(*) FROM queue_entries \
                 WHERE queue_name = ?1 AND claimed_by IS NOT NULL",
                params![queue_name],
                |row| row.get(0),
            )?;
            if claimed >= global {
                return Ok(None);
            }
        }
        if let Some(per_worker) = worker_concurrency {
            let mine: u32 = tx.query_row(
                "SELECT COUNT(*) FROM queue_entries WHERE queue_name = ?1 AND claimed_by = ?2",
                params![queue_name, worker_id],
                |row| row.get(0),
            )?;
            if mine >= per_worker {
                return Ok(None);
            }
        }
        let next: Option<(i64, String)> = tx
            .query_row(
                "SELECT entry_id, workflow_id FROM queue_entries \
                 WHERE queue_name = ?1 AND claimed_by IS NULL \
                 ORDER BY entry_id LIMIT 1",
                params![queue_name],
                |row| Ok((row.get(0)?, row.get(1)?)),
            )
            .optional()?;
        let Some((entry_id, workflow_id)) = next else {
            return Ok(None);
        };
        tx.execute(
            "UPDATE queue_entries SET claimed_by = ?1, claimed_at_ms = ?2, heartbeat_at_ms = ?2 \
             WHERE entry_id = ?3",
            params![worker_id, now_ms, entry_id],
        )?;
        tx.execute(
            "UPDATE workflows SET executor_id = ?1, heartbeat_at_ms = ?2, updated_at_ms = ?2 \
             WHERE workflow_id = ?3",
            params![worker_id, now_ms, workflow_id],
        )?;
        // A re-claim after a stale release starts a new life: unfinished
        // steps get a fresh retry budget.
        tx.execute(
            "UPDATE steps SET attempts = 0, attempt_started_at_ms = '[]' \
             WHERE workflow_id = ?1 AND status = 'RUNNING'",
            params![workflow_id],
        )?;
        let rec = tx.query_row(
            &format!("SELECT {WF_COLS} FROM workflows WHERE workflow_id = ?1"),
            params![workflow_id],
            map_workflow,
        )?;
        tx.commit()?;
        Ok(Some(rec))
    }

    /// Finishes a queued workflow and removes its queue entry atomically.
    /// Returns whether this call performed the PENDING transition.
    pub fn finalize_queued(
        &self,
        workflow_id: &str,
        status: WorkflowStatus,
        outcome: Option<&Value>,
        now_ms: i64,
    ) -> CoreResult<bool> {
        debug_assert!(status.is_terminal());
        let payload = outcome.map(serde_json::to_string).transpose()?;
        let mut conn = self.conn.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let rows = tx.execute(
            "UPDATE workflows SET status = ?1, output_or_error = ?2, updated_at_ms = ?3 \
             WHERE workflow_id = ?4 AND status = 'PENDING'",
            params![status.as_str(), payload, now_ms, workflow_id],
        )?;
        tx.execute(
            "DELETE FROM queue_entries WHERE workflow_id = ?1",
            params![workflow_id],
        )?;
        tx.commit()?;
        Ok(rows == 1)
    }

    /// Returns claims whose holder stopped heartbeating to the claimable
    /// pool. Fires for entries older than `staleness_ms`.
    pub fn release_stale_claims(&self, staleness_ms: u64, now_ms: i64) -> CoreResult<u64> {
        let cutoff = now_ms - staleness_ms as i64;
        let conn = self.conn.lock();
        let rows = conn.execute(
            "UPDATE queue_entries SET claimed_by = NULL, claimed_at_ms = NULL, \
             heartbeat_at_ms = NULL \
             WHERE claimed_by IS NOT NULL \
             AND COALESCE(heartbeat_at_ms, claimed_at_ms) < ?1",
            params![cutoff],
        )?;
        Ok(rows as u64)
    }

    /// Direct (non-queued) PENDING workflows whose executor stopped
    /// heartbeating: the candidates for adoption.
    pub fn list_stale_direct_pending(
        &self,
        staleness_ms: u64,
        now_ms: i64,
    ) -> CoreResult<Vec<WorkflowRecord>> {
        let cutoff = now_ms - staleness_ms as i64;
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(&format!(
            "SELECT {WF_COLS} FROM workflows \
             WHERE status = 'PENDING' AND queue_name IS NULL AND heartbeat_at_ms < ?1 \
             ORDER BY created_at_ms"
        ))?;
        let rows = stmt.query_map(params![cutoff], map_workflow)?;
        let mut out = Vec::new();
        for row in rows {
            out.push(row?);
        }
        Ok(out)
    }

    /// Takes ownership of one stale PENDING workflow. The staleness check
    /// inside the UPDATE makes concurrent adopters mutually exclusive:
    /// exactly one caller sees a changed row.
    pub fn adopt_workflow(
        &self,
        workflow_id: &str,
        executor_id: &str,
        staleness_ms: u64,
        now_ms: i64,
    ) -> CoreResult<bool> {
        let cutoff = now_ms - staleness_ms as i64;
        let mut conn = self.conn.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let rows = tx.execute(
            "UPDATE workflows SET executor_id = ?1, heartbeat_at_ms = ?2, updated_at_ms = ?2 \
             WHERE workflow_id = ?3 AND status = 'PENDING' AND heartbeat_at_ms < ?4",
            params![executor_id, now_ms, workflow_id, cutoff],
        )?;
        if rows == 1 {
            tx.execute(
                "UPDATE steps SET attempts = 0, attempt_started_at_ms = '[]' \
                 WHERE workflow_id = ?1 AND status = 'RUNNING'",
                params![workflow_id],
            )?;
        }
        tx.commit()?;
        Ok(rows == 1)
    }

    pub fn get_step(&self, workflow_id: &str, step_seq: i64) -> CoreResult<Option<StepRecord>> {
        let conn = self.conn.lock();
        let rec = conn
            .query_row(
                &format!(
                    "SELECT {STEP_COLS} FROM steps WHERE workflow_id = ?1 AND step_seq = ?2"
                ),
                params![workflow_id, step_seq],
                map_step,
            )
            .optional()?;
        Ok(rec)
    }

    /// Durably opens the next attempt of a step BEFORE its body runs: bumps
    /// the attempt counter, stamps the start time, and marks it RUNNING. A
    /// step already at SUCCESS is returned untouched.
    pub fn begin_step_attempt(
        &self,
        workflow_id: &str,
        step_seq: i64,
        name: &str,
        now_ms: i64,
    ) -> CoreResult<StepRecord> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let existing = tx
            .query_row(
                &format!(
                    "SELECT {STEP_COLS} FROM steps WHERE workflow_id = ?1 AND step_seq = ?2"
                ),
                params![workflow_id, step_seq],
                map_step,
            )
            .optional()?;
        let rec = match existing {
            Some(rec) if rec.status == StepStatus::Success => rec,
            Some(mut rec) => {
                rec.attempts += 1;
                rec.attempt_started_at_ms.push(now_ms);
                rec.status = StepStatus::Running;
                tx.execute(
                    "UPDATE steps SET status = 'RUNNING', attempts = ?1, \
                     attempt_started_at_ms = ?2 WHERE workflow_id = ?3 AND step_seq = ?4",
                    params![
                        rec.attempts,
                        serde_json::to_string(&rec.attempt_started_at_ms)?,
                        workflow_id,
                        step_seq,
                    ],
                )?;
                rec
            }
            None => {
                let rec = StepRecord {
                    workflow_id: workflow_id.to_string(),
                    step_seq,
                    name: name.to_string(),
                    status: StepStatus::Running,
                    output_or_error: None,
                    attempts: 1,
                    attempt_started_at_ms: vec![now_ms],
                };
                tx.execute(
                    "INSERT INTO steps (workflow_id, step_seq, name, status, attempts, \
                     attempt_started_at_ms) VALUES (?1, ?2, ?3, 'RUNNING', 1, ?4)",
                    params![
                        workflow_id,
                        step_seq,
                        name,
                        serde_json::to_string(&rec.attempt_started_at_ms)?,
                    ],
                )?;
                rec
            }
        };
        tx.commit()?;
        Ok(rec)
    }

    /// Records a step outcome. A step that already reached SUCCESS is
    /// immutable; later writes are ignored.
    pub fn finish_step(
        &self,
        workflow_id: &str,
        step_seq: i64,
        status: StepStatus,
        outcome: Option<&Value>,
    ) -> CoreResult<()> {
        let payload = outcome.map(serde_json::to_string).transpose()?;
        let conn = self.conn.lock();
        conn.execute(
            "UPDATE steps SET status = ?1, output_or_error = ?2 \
             WHERE workflow_id = ?3 AND step_seq = ?4 AND status != 'SUCCESS'",
            params![status.as_str(), payload, workflow_id, step_seq],
        )?;
        Ok(())
    }

    /// Upserts an event value, bumping its version. The workflow must exist;
    /// it may already be finished.
    pub fn set_event(
        &self,
        workflow_id: &str,
        key: &str,
        value: &Value,
        now_ms: i64,
    ) -> CoreResult<i64> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let exists: Option<i64> = tx
            .query_row(
                "SELECT 1 FROM workflows WHERE workflow_id = ?1",
                params![workflow_id],
                |row| row.get(0),
            )
            .optional()?;
        if exists.is_none() {
            return Err(CoreError::UnknownWorkflow {
                workflow_id: workflow_id.to_string(),
            });
        }
        tx.execute(
            "INSERT INTO events (workflow_id, key, value, version, updated_at_ms) \
             VALUES (?1, ?2, ?3, 1, ?4) \
             ON CONFLICT(workflow_id, key) DO UPDATE SET value = excluded.value, \
             version = events.version + 1, updated_at_ms = excluded.updated_at_ms",
            params![workflow_id, key, serde_json::to_string(value)?, now_ms],
        )?;
        let version: i64 = tx.query_row(
            "SELECT version FROM events WHERE workflow_id = ?1 AND key = ?2",
            params![workflow_id, key],
            |row| row.get(0),
        )?;
        tx.commit()?;
        Ok(version)
    }

    pub fn get_event(&self, workflow_id: &str, key: &str) -> CoreResult<Option<EventRecord>> {
        let conn = self.conn.lock();
        let rec = conn
            .query_row(
                "SELECT workflow_id, key, value, version, updated_at_ms FROM events \
                 WHERE workflow_id = ?1 AND key = ?2",
                params![workflow_id, key],
                |row| {
                    Ok(EventRecord {
                        workflow_id: row.get(0)?,
                        key: row.get(1)?,
                        value: json_col(row, 2)?,
                        version: row.get(3)?,
                        updated_at_ms: row.get(4)?,
                    })
                },
            )
            .optional()?;
        Ok(rec)
    }

    /// All entries of one queue in FIFO order, mainly for inspection and
    /// tests.
    pub fn list_queue_entries(&self, queue_name: &str) -> CoreResult<Vec<QueueEntry>> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(
            "SELECT entry_id, queue_name, workflow_id, enqueued_at_ms, claimed_by, \
             claimed_at_ms, heartbeat_at_ms FROM queue_entries WHERE queue_name = ?1 \
             ORDER BY entry_id",
        )?;
        let rows = stmt.query_map(params![queue_name], map_entry)?;
        let mut out = Vec::new();
        for row in rows {
            out.push(row?);
        }
        Ok(out)
    }

    /// Workflows currently in a given status, oldest first.
    pub fn list_workflows_by_status(
        &self,
        status: WorkflowStatus,
    ) -> CoreResult<Vec<WorkflowRecord>> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(&format!(
            "SELECT {WF_COLS} FROM workflows WHERE status = ?1 ORDER BY created_at_ms"
        ))?;
        let rows = stmt.query_map(params![status.as_str()], map_workflow)?;
        let mut out = Vec::new();
        for row in rows {
            out.push(row?);
        }
        Ok(out)
    }
}
