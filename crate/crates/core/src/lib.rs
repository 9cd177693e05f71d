//! Core building blocks for the adaptive batch-size arbitrator: a deterministic
//! simulated BSP training cluster, per-cycle metric aggregation, reward
//! computation, and the discrete-action policy trained by policy gradient.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod simenv;

pub use error::CoreError;

pub type Result<T> = std::result::Result<T, CoreError>;
