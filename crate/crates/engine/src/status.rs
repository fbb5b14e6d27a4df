//! Task-list construction and snapshot aggregation.
//!
//! The tasks list is derived entirely from durable records: child workflow
//! rows and their first steps. Nothing here mutates state, so snapshots can
//! be rebuilt identically by any process at any time.

use std::collections::HashMap;

use objmirror_core::{ChildWorkflowState, WorkflowStatus};

use crate::types::{FileStatus, FileTask, TaskCounts, TransferRequest, TransferStatusSnapshot};

/// Projects one child workflow (and its transfer step) into a FileTask.
fn file_task(key: &str, child: Option<&ChildWorkflowState>) -> FileTask {
    let Some(child) = child else {
        return FileTask::pending(key);
    };
    let wf = &child.workflow;
    let step = child.first_step.as_ref();
    let status = match wf.status {
        WorkflowStatus::Success => FileStatus::Success,
        WorkflowStatus::Error => FileStatus::Failed,
        WorkflowStatus::Pending => {
            if step.is_some() {
                FileStatus::InProgress
            } else {
                FileStatus::Pending
            }
        }
    };
    let started_at = step
        .and_then(|s| s.attempt_started_at_ms.first().copied())
        .or_else(|| status.is_terminal().then_some(wf.created_at_ms));
    let finished_at = status.is_terminal().then_some(wf.updated_at_ms);
    let duration = match (started_at, finished_at) {
        (Some(s), Some(f)) => Some((f - s).max(0) as f64 / 1000.0),
        _ => None,
    };
    let size = wf
        .output()
        .and_then(|v| v.get("size"))
        .and_then(|v| v.as_u64());
    FileTask {
        key: key.to_string(),
        size,
        status,
        started_at,
        finished_at,
        duration,
        attempts: step.map(|s| s.attempts).unwrap_or(0),
        error: wf.error_message(),
    }
}

/// Builds the tasks list for a request from the children recorded so far,
/// in request key order. Keys not yet enqueued appear as PENDING.
pub fn build_tasks(request: &TransferRequest, children: &[ChildWorkflowState]) -> Vec<FileTask> {
    let by_key: HashMap<&str, &ChildWorkflowState> = children
        .iter()
        .filter_map(|c| {
            c.workflow
                .input
                .get("source_key")
                .and_then(|v| v.as_str())
                .map(|k| (k, c))
        })
        .collect();
    request
        .keys
        .iter()
        .map(|key| file_task(key, by_key.get(key.as_str()).copied()))
        .collect()
}

/// Folds a tasks list into the aggregate snapshot. Pure arithmetic:
/// byte totals cover the sizes known so far, the rate is bytes done over
/// elapsed wall time (zero while no time has passed), and the job is
/// complete exactly when nothing is pending or in progress.
pub fn aggregate_status(
    workflow_id: &str,
    tasks: Vec<FileTask>,
    started_at_ms: i64,
    now_ms: i64,
) -> TransferStatusSnapshot {
    let mut counts = TaskCounts::default();
    let mut bytes_total = 0u64;
    let mut bytes_done = 0u64;
    for task in &tasks {
        match task.status {
            FileStatus::Pending => counts.pending += 1,
            FileStatus::InProgress => counts.in_progress += 1,
            FileStatus::Success => counts.success += 1,
            FileStatus::Failed => counts.failed += 1,
        }
        if let Some(size) = task.size {
            bytes_total += size;
            if task.status == FileStatus::Success {
                bytes_done += size;
            }
        }
    }
    let elapsed = (now_ms - started_at_ms).max(0) as f64 / 1000.0;
    let overall_rate = if elapsed > 0.0 {
        bytes_done as f64 / elapsed
    } else {
        0.0
    };
    TransferStatusSnapshot {
        workflow_id: workflow_id.to_string(),
        complete: counts.pending == 0 && counts.in_progress == 0,
        counts,
        bytes_total,
        bytes_done,
        elapsed,
        overall_rate,
        tasks,
    }
}
