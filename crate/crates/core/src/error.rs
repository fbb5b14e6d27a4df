//! Error type shared by the store and the runtime.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("database error: {0}")]
    Sqlite(#[from] rusqlite::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("workflow {workflow_id} already exists with different input")]
    Conflict { workflow_id: String },

    #[error("no workflow named {name} is registered")]
    UnknownWorkflowName { name: String },

    #[error("no workflow with id {workflow_id}")]
    UnknownWorkflow { workflow_id: String },

    #[error("no queue named {name}")]
    UnknownQueue { name: String },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    #[error("internal error: {reason}")]
    Internal { reason: String },
}

pub type CoreResult<T> = Result<T, CoreError>;
