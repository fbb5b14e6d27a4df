//! Transfer-facing domain types: requests, per-file tasks, status
//! snapshots, and throttle configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIB: u64 = 1024 * 1024;

/// Default part size: top of the 8-16 MiB byte-range guidance, so large
/// files take fewer requests.
pub const DEFAULT_PART_SIZE: u64 = 16 * MIB;

/// Default concurrent part copies within one file. Desk-scale guess,
/// exposed in config.
pub const DEFAULT_FILE_PARALLELISM: u32 = 8;

/// Default allowed part-size range.
pub const DEFAULT_PART_SIZE_BOUNDS: (u64, u64) = (8 * MIB, 128 * MIB);

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid transfer request: {reason}")]
    InvalidRequest { reason: String },

    #[error("throttle release without a matching acquire")]
    ReleaseWithoutAcquire,

    #[error("invalid throttle configuration: {reason}")]
    InvalidThrottle { reason: String },
}

/// A batch mirroring request: copy `keys` from the source bucket to the
/// destination bucket, optionally re-rooted under `dest_prefix`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferRequest {
    pub source_bucket: String,
    pub dest_bucket: String,
    pub keys: Vec<String>,
    #[serde(default)]
    pub dest_prefix: Option<String>,
    #[serde(default = "default_part_size")]
    pub part_size: u64,
    #[serde(default = "default_file_parallelism")]
    pub file_parallelism: u32,
}

fn default_part_size() -> u64 {
    DEFAULT_PART_SIZE
}

fn default_file_parallelism() -> u32 {
    DEFAULT_FILE_PARALLELISM
}

impl TransferRequest {
    /// Validates shape and tunables against the configured part-size bounds.
    pub fn validate(&self, part_size_bounds: (u64, u64)) -> Result<(), EngineError> {
        let fail = |reason: String| Err(EngineError::InvalidRequest { reason });
        if self.source_bucket.is_empty() || self.dest_bucket.is_empty() {
            return fail("source and destination buckets are required".into());
        }
        if self.keys.is_empty() {
            return fail("keys must be non-empty".into());
        }
        let mut seen = std::collections::HashSet::new();
        for key in &self.keys {
            if key.is_empty() {
                return fail("keys must be non-empty strings".into());
            }
            if !seen.insert(key) {
                return fail(format!("duplicate key {key:?}"));
            }
        }
        let (min, max) = part_size_bounds;
        if self.part_size < min || self.part_size > max {
            return fail(format!(
                "part_size {} outside allowed range [{min}, {max}]",
                self.part_size
            ));
        }
        if self.file_parallelism == 0 {
            return fail("file_parallelism must be positive".into());
        }
        Ok(())
    }

    /// Destination key for a source key: `dest_prefix` + key, identity when
    /// the prefix is empty.
    pub fn dest_key(&self, key: &str) -> String {
        match &self.dest_prefix {
            Some(prefix) if !prefix.is_empty() => format!("{prefix}{key}"),
            _ => key.to_string(),
        }
    }
}

/// Per-file transfer state as exposed in status snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FileStatus {
    Pending,
    InProgress,
    Success,
    Failed,
}

impl FileStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, FileStatus::Success | FileStatus::Failed)
    }
}

/// One file's view in the tasks list: status, measured size and timing, the
/// attempt count of its transfer step, and the failure message if any.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileTask {
    pub key: String,
    pub size: Option<u64>,
    pub status: FileStatus,
    pub started_at: Option<i64>,
    pub finished_at: Option<i64>,
    pub duration: Option<f64>,
    pub attempts: u32,
    pub error: Option<String>,
}

impl FileTask {
    /// A file not yet picked up by any worker.
    pub fn pending(key: impl Into<String>) -> Self {
        FileTask {
            key: key.into(),
            size: None,
            status: FileStatus::Pending,
            started_at: None,
            finished_at: None,
            duration: None,
            attempts: 0,
            error: None,
        }
    }
}

/// Tally of task statuses; always sums to the number of tasks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub pending: u64,
    pub in_progress: u64,
    pub success: u64,
    pub failed: u64,
}

impl TaskCounts {
    pub fn total(&self) -> u64 {
        self.pending + self.in_progress + self.success + self.failed
    }
}

/// Aggregate progress of one transfer job, derived purely from its tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferStatusSnapshot {
    pub workflow_id: String,
    pub tasks: Vec<FileTask>,
    pub counts: TaskCounts,
    pub bytes_total: u64,
    pub bytes_done: u64,
    pub elapsed: f64,
    pub overall_rate: f64,
    pub complete: bool,
}

/// Write-request throttle sizing. One process partitions
/// `global_max_inflight` statically: each worker gets `per_worker_share`
/// permits, and shares must not oversubscribe the global cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThrottleConfig {
    #[serde(default = "default_global_max_inflight")]
    pub global_max_inflight: u32,
    #[serde(default)]
    pub per_worker_share: Option<u32>,
}

fn default_global_max_inflight() -> u32 {
    3_500
}

impl Default for ThrottleConfig {
    fn default() -> Self {
        ThrottleConfig {
            global_max_inflight: default_global_max_inflight(),
            per_worker_share: None,
        }
    }
}

impl ThrottleConfig {
    /// Permits for one worker among `workers` equals: the explicit share if
    /// set, otherwise an even split of the global cap.
    pub fn share_for(&self, workers: u32) -> Result<u32, EngineError> {
        if self.global_max_inflight == 0 {
            return Err(EngineError::InvalidThrottle {
                reason: "global_max_inflight must be positive".into(),
            });
        }
        let workers = workers.max(1);
        let share = match self.per_worker_share {
            Some(share) if share == 0 => {
                return Err(EngineError::InvalidThrottle {
                    reason: "per_worker_share must be positive".into(),
                });
            }
            Some(share) => share,
            None => (self.global_max_inflight / workers).max(1),
        };
        if share as u64 * workers as u64 > self.global_max_inflight as u64 {
            return Err(EngineError::InvalidThrottle {
                reason: format!(
                    "per_worker_share {share} x {workers} workers exceeds \
                     global_max_inflight {}",
                    self.global_max_inflight
                ),
            });
        }
        Ok(share)
    }
}
