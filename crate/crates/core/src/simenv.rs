//! Deterministic simulation of a heterogeneous data-parallel BSP cluster.
//!
//! Each iteration every worker computes over its current batch, then all
//! workers meet at a global barrier: the straggler's compute time plus the
//! slowest link's communication time set the shared iteration wall time.
//! Batch accuracy follows a saturating curve over cumulative samples with a
//! batch-dependent asymptote, so small batches generalize better while large
//! batches amortize the fixed per-iteration costs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::rng::{seeded_rng, Stream};
use crate::Result;

/// Smallest batch size any worker may run.
pub const MIN_BATCH: u32 = 32;
/// Largest batch size any worker may run.
pub const MAX_BATCH: u32 = 1024;

/// Congestion multiplier bounds for every link.
pub const CONGESTION_MIN: f64 = 0.1;
pub const CONGESTION_MAX: f64 = 1.0;

/// Per-node compute capability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker_id: u32,
    /// Samples per second of forward+backward compute.
    pub compute_rate: f64,
    /// Fixed seconds per iteration (kernel launches, host sync).
    pub fixed_overhead: f64,
    /// Largest feasible batch size for this node.
    pub memory_capacity: u32,
}

impl WorkerProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.compute_rate > 0.0) {
            return Err(CoreError::Config(format!(
                "worker {}: compute_rate must be > 0",
                self.worker_id
            )));
        }
        if !(self.fixed_overhead >= 0.0) {
            return Err(CoreError::Config(format!(
                "worker {}: fixed_overhead must be >= 0",
                self.worker_id
            )));
        }
        if self.memory_capacity < MAX_BATCH {
            return Err(CoreError::Config(format!(
                "worker {}: memory_capacity {} below maximum batch {}",
                self.worker_id, self.memory_capacity, MAX_BATCH
            )));
        }
        Ok(())
    }
}

/// Bounded random walk driving each link's throughput multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionProcess {
    /// Multiplier at reset, within [0.1, 1.0].
    pub initial: f64,
    /// Walk step applied once per iteration window; 0 pins the multiplier.
    pub step: f64,
}

impl Default for CongestionProcess {
    fn default() -> Self {
        Self {
            initial: 1.0,
            step: 0.05,
        }
    }
}

/// Shared network characteristics of the cluster fabric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    /// Link throughput in bytes/second at multiplier 1.0.
    pub base_throughput: f64,
    pub congestion: CongestionProcess,
    /// Expected retransmissions per second under full congestion.
    pub retx_rate: f64,
    /// Gradient payload exchanged per iteration, independent of batch size.
    pub payload_bytes: f64,
}

impl NetworkProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_throughput > 0.0) {
            return Err(CoreError::Config("base_throughput must be > 0".into()));
        }
        if !(self.retx_rate >= 0.0) {
            return Err(CoreError::Config("retx_rate must be >= 0".into()));
        }
        if !(self.payload_bytes >= 0.0) {
            return Err(CoreError::Config("payload_bytes must be >= 0".into()));
        }
        let c = &self.congestion;
        if !(CONGESTION_MIN..=CONGESTION_MAX).contains(&c.initial) {
            return Err(CoreError::Config(format!(
                "congestion.initial {} outside [{CONGESTION_MIN}, {CONGESTION_MAX}]",
                c.initial
            )));
        }
        if !(c.step >= 0.0 && c.step <= CONGESTION_MAX - CONGESTION_MIN) {
            return Err(CoreError::Config(format!(
                "congestion.step {} outside [0, {}]",
                c.step,
                CONGESTION_MAX - CONGESTION_MIN
            )));
        }
        Ok(())
    }
}

/// Parametric accuracy/gradient-noise model of the trained workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurveModel {
    /// Asymptotic accuracy at the pivot batch size.
    pub a0: f64,
    /// Accuracy penalty per doubling above the pivot.
    pub a1: f64,
    /// Pivot batch size below which no generalization penalty applies.
    pub b_star: u32,
    /// Sample-count time constant of the saturating curve.
    pub tau: f64,
    /// Gradient-noise coefficient; 0 switches the environment to zero-noise mode.
    pub noise_scale: f64,
    /// Nominal gradient dimensionality; concentrates the synthesized sigma_norm.
    pub grad_dim: u64,
}

impl TrainingCurveModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0 && self.a0 <= 1.0) {
            return Err(CoreError::Config("a0 must be in (0, 1]".into()));
        }
        if !(self.a1 >= 0.0) {
            return Err(CoreError::Config("a1 must be >= 0".into()));
        }
        if !(32..=1024).contains(&self.b_star) {
            return Err(CoreError::Config("b_star must be in [32, 1024]".into()));
        }
        if !(self.tau > 0.0) {
            return Err(CoreError::Config("tau must be > 0".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(CoreError::Config("noise_scale must be >= 0".into()));
        }
        if self.grad_dim == 0 {
            return Err(CoreError::Config("grad_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything one worker observes about one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub worker_id: u32,
    pub iteration_index: u64,
    pub batch_size: u32,
    pub compute_time: f64,
    pub sync_time: f64,
    pub batch_accuracy: f64,
    pub grad_norm_std: f64,
    pub throughput_bytes: f64,
    pub retransmissions: u64,
    pub cpu_time_ratio: f64,
    pub memory_utilization: f64,
}

impl IterationOutcome {
    pub fn wall_time(&self) -> f64 {
        self.compute_time + self.sync_time
    }
}

/// Accuracy asymptote as a function of batch size:
/// `a0 - a1 * max(0, log2(B / B*))`, clamped to [0, 1]. Non-increasing in B.
pub fn accuracy_asymptote(model: &TrainingCurveModel, batch_size: u32) -> f64 {
    let penalty_doublings = (batch_size as f64 / model.b_star as f64).log2().max(0.0);
    (model.a0 - model.a1 * penalty_doublings).clamp(0.0, 1.0)
}

/// One worker's link: per-worker congestion state over the shared profile.
#[derive(Debug, Clone)]
pub struct NetworkLink {
    profile: NetworkProfile,
    multiplier: f64,
}

impl NetworkLink {
    pub fn new(profile: NetworkProfile) -> Self {
        let multiplier = profile.congestion.initial;
        Self {
            profile,
            multiplier,
        }
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    pub fn reset(&mut self) {
        self.multiplier = self.profile.congestion.initial;
    }

    /// Advance the congestion walk one window and sample (throughput bytes/s,
    /// retransmission count). Retransmissions follow a Poisson process whose
    /// mean is `retx_rate * window * (1 - multiplier)`.
    pub fn sample(&mut self, window_seconds: f64, rng: &mut ChaCha8Rng) -> (f64, u64) {
        debug_assert!(window_seconds > 0.0);
        let step = self.profile.congestion.step;
        // One rng draw per window even when the step is pinned at zero, so the
        // stream layout does not depend on the congestion parameters.
        let up: bool = rng.random();
        let mut m = self.multiplier + if up { step } else { -step };
        if m > CONGESTION_MAX {
            m = 2.0 * CONGESTION_MAX - m;
        }
        if m < CONGESTION_MIN {
            m = 2.0 * CONGESTION_MIN - m;
        }
        self.multiplier = m.clamp(CONGESTION_MIN, CONGESTION_MAX);

        let throughput = self.profile.base_throughput * self.multiplier;
        let mean_retx = self.profile.retx_rate * window_seconds * (1.0 - self.multiplier);
        let retx = if mean_retx > 0.0 {
            Poisson::new(mean_retx)
                .expect("mean_retx > 0")
                .sample(rng)
                .round() as u64
        } else {
            0
        };
        (throughput, retx)
    }
}

/// Synthesize the normalized gradient std/variance pair at a batch size.
/// sigma_norm scales as `noise_scale / sqrt(B)`; the sample concentrates with
/// grad_dim. Returns exactly (0, 0) in zero-noise mode.
pub fn synth_gradient_stats(
    model: &TrainingCurveModel,
    batch_size: u32,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    debug_assert!(batch_size >= 1);
    let g: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    if model.noise_scale == 0.0 {
        return (0.0, 0.0);
    }
    let concentration = (2.0 * model.grad_dim as f64).sqrt();
    let chi = (1.0 + g / concentration).max(0.0);
    let sigma = model.noise_scale / (batch_size as f64).sqrt() * chi;
    (sigma, sigma * sigma)
}

/// The whole cluster stepped one BSP iteration at a time. Owns its RNG, so
/// identical seed and configuration replay bit-identically.
#[derive(Debug, Clone)]
pub struct ClusterSim {
    workers: Vec<WorkerProfile>,
    curve: TrainingCurveModel,
    cores: u32,
    seed: u64,
    rng: ChaCha8Rng,
    links: Vec<NetworkLink>,
    cumulative_samples: Vec<u64>,
    global_samples: u64,
    iteration: u64,
    sim_time: f64,
}

impl ClusterSim {
    pub fn new(
        workers: Vec<WorkerProfile>,
        network: NetworkProfile,
        curve: TrainingCurveModel,
        cores: u32,
        run_seed: u64,
    ) -> Result<Self> {
        if workers.is_empty() {
            return Err(CoreError::Config("cluster needs at least one worker".into()));
        }
        network.validate()?;
        curve.validate()?;
        let mut seen = std::collections::HashSet::new();
        for w in &workers {
            w.validate()?;
            if !seen.insert(w.worker_id) {
                return Err(CoreError::Config(format!(
                    "duplicate worker_id {}",
                    w.worker_id
                )));
            }
        }
        if cores == 0 {
            return Err(CoreError::Config("cores must be >= 1".into()));
        }
        let seed = crate::rng::derive_seed(run_seed, Stream::Simulator);
        let n = workers.len();
        Ok(Self {
            workers,
            curve,
            cores,
            seed,
            rng: seeded_rng(run_seed, Stream::Simulator),
            links: vec![NetworkLink::new(network); n],
            cumulative_samples: vec![0; n],
            global_samples: 0,
            iteration: 0,
            sim_time: 0.0,
        })
    }

    pub fn worker_ids(&self) -> Vec<u32> {
        self.workers.iter().map(|w| w.worker_id).collect()
    }

    pub fn curve(&self) -> &TrainingCurveModel {
        &self.curve
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    pub fn global_samples(&self) -> u64 {
        self.global_samples
    }

    pub fn cumulative_samples(&self, worker_id: u32) -> Option<u64> {
        self.index_of(worker_id).map(|i| self.cumulative_samples[i])
    }

    fn index_of(&self, worker_id: u32) -> Option<usize> {
        self.workers.iter().position(|w| w.worker_id == worker_id)
    }

    /// Rewind to the initial state: counters zeroed, congestion re-pinned,
    /// RNG reseeded. Two resets with the same seed replay identically.
    pub fn reset(&mut self) {
        use rand_chacha::rand_core::SeedableRng;
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        for link in &mut self.links {
            link.reset();
        }
        self.cumulative_samples.iter_mut().for_each(|s| *s = 0);
        self.global_samples = 0;
        self.iteration = 0;
        self.sim_time = 0.0;
    }

    /// Advance the whole cluster one iteration. `assignments` must contain
    /// exactly one (worker_id, batch_size) entry per registered worker; entry
    /// order does not matter. Returns one outcome per worker in registration
    /// order; every worker shares the same barrier completion time.
    pub fn step_iteration(&mut self, assignments: &[(u32, u32)]) -> Result<Vec<IterationOutcome>> {
        if assignments.len() != self.workers.len() {
            return Err(CoreError::Contract(format!(
                "expected {} batch assignments, got {}",
                self.workers.len(),
                assignments.len()
            )));
        }
        let mut batches = vec![None; self.workers.len()];
        for &(worker_id, batch) in assignments {
            let idx = self.index_of(worker_id).ok_or_else(|| {
                CoreError::Config(format!("unknown worker_id {worker_id} in assignment"))
            })?;
            if batches[idx].is_some() {
                return Err(CoreError::Contract(format!(
                    "duplicate assignment for worker {worker_id}"
                )));
            }
            if !(MIN_BATCH..=MAX_BATCH).contains(&batch) {
                return Err(CoreError::Contract(format!(
                    "batch size {batch} outside [{MIN_BATCH}, {MAX_BATCH}]"
                )));
            }
            batches[idx] = Some(batch);
        }
        let batches: Vec<u32> = batches.into_iter().map(|b| b.expect("all set")).collect();

        // BSP compute phase: the straggler sets the barrier arrival time.
        let compute: Vec<f64> = self
            .workers
            .iter()
            .zip(&batches)
            .map(|(w, &b)| w.fixed_overhead + b as f64 / w.compute_rate)
            .collect();
        let max_compute = compute.iter().cloned().fold(0.0, f64::max);

        // Communication phase: the window spans the previous barrier to this
        // one; congestion walks advance once per iteration using the previous
        // wall time as a stand-in window (the first iteration uses compute).
        let provisional_window = max_compute.max(1e-9);
        let mut throughput = vec![0.0; self.workers.len()];
        let mut retx = vec![0u64; self.workers.len()];
        let mut comm = vec![0.0; self.workers.len()];
        for i in 0..self.workers.len() {
            let (tp, rx) = self.links[i].sample(provisional_window, &mut self.rng);
            throughput[i] = tp;
            retx[i] = rx;
            comm[i] = self.links[i].profile.payload_bytes / tp;
        }
        let max_comm = comm.iter().cloned().fold(0.0, f64::max);
        let wall = max_compute + max_comm;

        let mut outcomes = Vec::with_capacity(self.workers.len());
        for i in 0..self.workers.len() {
            let b = batches[i];
            self.cumulative_samples[i] += b as u64;
            self.global_samples += b as u64;

            let asymptote = accuracy_asymptote(&self.curve, b);
            let saturation = 1.0 - (-(self.cumulative_samples[i] as f64) / self.curve.tau).exp();
            let noise: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut self.rng);
            let acc_noise = if self.curve.noise_scale > 0.0 {
                self.curve.noise_scale / (b as f64).sqrt() * noise
            } else {
                0.0
            };
            let batch_accuracy = (asymptote * saturation + acc_noise).clamp(0.0, 1.0);

            let (sigma, _sigma_sq) = synth_gradient_stats(&self.curve, b, &mut self.rng);

            let cpu_noise: f64 = Normal::new(0.0, 0.05).expect("cpu noise").sample(&mut self.rng);
            let cpu_time_ratio = (self.cores as f64 * (1.0 + cpu_noise)).max(0.1);

            let memory_utilization =
                (b as f64 / self.workers[i].memory_capacity as f64).clamp(0.0, 1.0);

            outcomes.push(IterationOutcome {
                worker_id: self.workers[i].worker_id,
                iteration_index: self.iteration,
                batch_size: b,
                compute_time: compute[i],
                sync_time: wall - compute[i],
                batch_accuracy,
                grad_norm_std: sigma,
                throughput_bytes: throughput[i],
                retransmissions: retx[i],
                cpu_time_ratio,
                memory_utilization,
            });
        }

        self.iteration += 1;
        self.sim_time += wall;
        Ok(outcomes)
    }
}
