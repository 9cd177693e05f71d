use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Bad cluster/run configuration (unknown worker, invalid profile, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computed value left the finite domain; the producing update is rejected.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
