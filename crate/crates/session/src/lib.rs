//! Session orchestration: worker runtimes driving the shared BSP simulator,
//! the centralized arbitrator running the policy, and the run artifacts
//! (episode CSV, step JSONL, event log) every mode shares.

pub mod analysis;
pub mod arbitrator;
pub mod cluster;
pub mod logging;
pub mod session;
pub mod worker;

pub use arbitrator::{ActionSelection, Decision};
pub use cluster::SharedCluster;
pub use logging::{EpisodeRecord, RunLogger, SessionSummary, StepRow};
pub use session::{run_session, SessionConfig, SessionOutcome, TransportKind};
pub use worker::apply_action;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{0}")]
    Core(#[from] dynamix_core::CoreError),
    #[error("transport: {0}")]
    Proto(#[from] dynamix_proto::ProtoError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("worker {worker_id} stalled at episode {episode} step {step}: {cause}")]
    WorkerStalled {
        worker_id: u32,
        episode: u64,
        step: u64,
        cause: String,
    },
    #[error("session aborted: {0}")]
    Aborted(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SessionError>;
