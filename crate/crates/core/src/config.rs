//! The run configuration document: cluster description plus optional
//! coefficient/schedule/limit overrides, read from a single JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::metrics::StateNormalizers;
use crate::policy::PpoConfig;
use crate::reward::{Regime, RewardCoefficients};
use crate::simenv::{
    ClusterSim, CongestionProcess, NetworkProfile, TrainingCurveModel, WorkerProfile, MAX_BATCH,
    MIN_BATCH,
};
use crate::Result;

/// Batch-size bounds and the common starting point x-bar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSizeLimits {
    pub min: u32,
    pub max: u32,
    pub initial: u32,
}

impl Default for BatchSizeLimits {
    fn default() -> Self {
        Self {
            min: MIN_BATCH,
            max: MAX_BATCH,
            initial: 256,
        }
    }
}

impl BatchSizeLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.min <= self.initial && self.initial <= self.max) {
            return Err(CoreError::Config(format!(
                "batch limits must satisfy min <= initial <= max, got {} <= {} <= {}",
                self.min, self.initial, self.max
            )));
        }
        if self.min < MIN_BATCH || self.max > MAX_BATCH {
            return Err(CoreError::Config(format!(
                "batch limits [{}, {}] outside the supported range [{MIN_BATCH}, {MAX_BATCH}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Named episode/step schedules mirroring the evaluation profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulePreset {
    #[serde(rename = "sgd-100")]
    Sgd100,
    #[serde(rename = "adaptive-70")]
    Adaptive70,
    #[serde(rename = "large-120")]
    Large120,
}

impl SchedulePreset {
    pub fn steps(self) -> u64 {
        match self {
            SchedulePreset::Sgd100 => 100,
            SchedulePreset::Adaptive70 => 70,
            SchedulePreset::Large120 => 120,
        }
    }

    pub fn regime(self) -> Regime {
        match self {
            SchedulePreset::Adaptive70 => Regime::Adaptive,
            _ => Regime::Sgd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub preset: SchedulePreset,
    pub episodes: u64,
    /// Overrides the preset's step count when set.
    pub steps: Option<u64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            preset: SchedulePreset::Sgd100,
            episodes: 20,
            steps: None,
        }
    }
}

impl Schedule {
    pub fn steps(&self) -> u64 {
        self.steps.unwrap_or_else(|| self.preset.steps())
    }
}

/// Report-stage knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Accuracy level for the time-to-threshold metric.
    pub accuracy_threshold: f64,
    /// Decision-step window for smoothing the accuracy series.
    pub smoothing_window: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            accuracy_threshold: 0.80,
            smoothing_window: 5,
        }
    }
}

/// The whole run document. `workers`, `network`, `curve` and `seed` form the
/// cluster schema; the remaining sections override built-in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub workers: Vec<WorkerProfile>,
    pub network: NetworkProfile,
    pub curve: TrainingCurveModel,
    /// Default run seed; CLI seeds take precedence.
    pub seed: u64,
    /// CPU cores per node, used for the cpu-time-ratio synthesis and normalizer.
    #[serde(default = "default_cores")]
    pub cores: u32,
    /// Iterations aggregated per decision cycle.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Sliding-window width for the accuracy-gain feature; defaults to max(2, k/4).
    #[serde(default)]
    pub gain_window: Option<usize>,
    #[serde(default)]
    pub coefficients: RewardCoefficients,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub limits: BatchSizeLimits,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub normalizers: Option<StateNormalizers>,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_cores() -> u32 {
    4
}

fn default_k() -> usize {
    8
}

impl RunDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CoreError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let doc: RunDocument = serde_json::from_str(&text)
            .map_err(|e| CoreError::Config(format!("invalid config {}: {e}", path.display())))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers.is_empty() {
            return Err(CoreError::Config("at least one worker required".into()));
        }
        for w in &self.workers {
            w.validate()?;
        }
        self.network.validate()?;
        self.curve.validate()?;
        self.coefficients.validate()?;
        self.ppo.validate()?;
        self.limits.validate()?;
        if self.k < 2 {
            return Err(CoreError::Config("k must be >= 2".into()));
        }
        let w = self.gain_window();
        if self.k < 2 * w {
            return Err(CoreError::Config(format!(
                "k = {} too small for gain window {w} (need k >= {})",
                self.k,
                2 * w
            )));
        }
        if self.schedule.episodes == 0 || self.schedule.steps() == 0 {
            return Err(CoreError::Config("schedule needs episodes and steps >= 1".into()));
        }
        Ok(())
    }

    pub fn gain_window(&self) -> usize {
        self.gain_window.unwrap_or_else(|| (self.k / 4).max(2))
    }

    pub fn normalizers(&self) -> StateNormalizers {
        self.normalizers.clone().unwrap_or(StateNormalizers {
            cpu_ratio: self.cores as f64,
            ..Default::default()
        })
    }

    pub fn build_sim(&self, run_seed: u64) -> Result<ClusterSim> {
        ClusterSim::new(
            self.workers.clone(),
            self.network.clone(),
            self.curve.clone(),
            self.cores,
            run_seed,
        )
    }

    /// The default desk-scale cluster: four moderately heterogeneous workers.
    pub fn default_desk() -> Self {
        Self::desk_cluster(4)
    }

    /// A desk-scale cluster with `n` workers. Compute rates spread around
    /// 2000 samples/s; the saturation constant grows with the worker count so
    /// the per-sample progress reflects coordination cost at scale.
    pub fn desk_cluster(n: u32) -> Self {
        let workers = (0..n)
            .map(|i| WorkerProfile {
                worker_id: i,
                // 2400 down to 1800 and cycling, a ~1.3x straggler spread
                compute_rate: 2400.0 - 150.0 * (i % 5) as f64,
                fixed_overhead: 0.05,
                memory_capacity: 1024,
            })
            .collect();
        RunDocument {
            workers,
            network: NetworkProfile {
                base_throughput: 1e9,
                congestion: CongestionProcess::default(),
                retx_rate: 20.0,
                payload_bytes: 6e7,
            },
            curve: TrainingCurveModel {
                a0: 0.82,
                a1: 0.03,
                b_star: 64,
                tau: scaled_tau(n),
                noise_scale: 0.5,
                grad_dim: 1_000_000,
            },
            seed: 42,
            cores: 4,
            k: 8,
            gain_window: None,
            coefficients: RewardCoefficients::default(),
            ppo: PpoConfig::default(),
            limits: BatchSizeLimits::default(),
            schedule: Schedule::default(),
            normalizers: None,
            report: ReportConfig::default(),
        }
    }

    /// A deeper-workload variant of this document: slower saturation and a
    /// steeper generalization penalty (tau and a1 scaled by 1.5).
    pub fn deeper_variant(&self) -> Self {
        let mut doc = self.clone();
        doc.curve.tau *= 1.5;
        doc.curve.a1 *= 1.5;
        doc
    }
}

/// Saturation constant as a function of worker count: per-worker sample
/// efficiency degrades gently with scale (synchronization and rounding cost).
pub fn scaled_tau(n_workers: u32) -> f64 {
    13_000.0 * (n_workers.max(1) as f64 / 4.0).powf(0.5)
}
