//! Aggregation of k consecutive iteration outcomes into the per-worker local
//! state, plus the shared global state every worker sees at a decision step.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::simenv::IterationOutcome;
use crate::Result;

/// Fixed policy input dimensionality: 11 local features + 3 global features.
pub const STATE_DIM: usize = 14;

/// Exactly k contiguous outcomes for one worker.
#[derive(Debug, Clone)]
pub struct AggregateWindow {
    worker_id: u32,
    outcomes: Vec<IterationOutcome>,
}

impl AggregateWindow {
    pub fn new(worker_id: u32, outcomes: Vec<IterationOutcome>) -> Result<Self> {
        if outcomes.len() < 2 {
            return Err(CoreError::Contract(format!(
                "window needs k >= 2 outcomes, got {}",
                outcomes.len()
            )));
        }
        for pair in outcomes.windows(2) {
            if pair[1].iteration_index != pair[0].iteration_index + 1 {
                return Err(CoreError::Contract(format!(
                    "window iterations not contiguous: {} then {}",
                    pair[0].iteration_index, pair[1].iteration_index
                )));
            }
        }
        if let Some(o) = outcomes.iter().find(|o| o.worker_id != worker_id) {
            return Err(CoreError::Contract(format!(
                "outcome for worker {} in window for worker {}",
                o.worker_id, worker_id
            )));
        }
        Ok(Self {
            worker_id,
            outcomes,
        })
    }

    pub fn worker_id(&self) -> u32 {
        self.worker_id
    }

    pub fn k(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self) -> &[IterationOutcome] {
        &self.outcomes
    }
}

/// The per-worker feature block assembled from one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    /// Mean link throughput over the window, bytes/s.
    pub tp: f64,
    /// Total retransmissions over the window.
    pub rtx: u64,
    /// Total CPU time divided by total wall-clock time; > 1 means parallel cores.
    pub cpu_ratio: f64,
    /// Mean memory utilization.
    pub mem_util: f64,
    /// Mean batch accuracy.
    pub a_bar: f64,
    /// Sample standard deviation of batch accuracy.
    pub sigma_batch: f64,
    /// Accuracy gain over the window (z-scored sliding-window difference).
    pub delta_a: f64,
    /// Mean iteration wall time, seconds.
    pub t_iter: f64,
    /// Mean normalized gradient std.
    pub sigma_norm: f64,
    /// Mean normalized gradient variance.
    pub sigma_norm_sq: f64,
    /// Current batch size encoded as (log2(B) - 5) / 5 in [0, 1].
    pub batch_size_norm: f64,
}

/// Shared training signals; identical for every worker at a decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    /// Slope of the global loss proxy over recent decision steps.
    pub loss_trend: f64,
    /// Latest global mean batch accuracy.
    pub val_accuracy_proxy: f64,
    /// Fraction of episode decision steps elapsed, in [0, 1].
    pub progress: f64,
}

/// Batch size encoding used as a state feature.
pub fn batch_size_norm(batch_size: u32) -> f64 {
    ((batch_size as f64).log2() - 5.0) / 5.0
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (ddof = 1); caller guarantees len >= 2.
fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Accuracy gain over an ordered series: z-score the series (sample std; a
/// zero-variance series yields 0), take sliding means of width `window_w`,
/// and return the average of the last `window_w` sliding means minus the
/// average of the first `window_w`.
pub fn accuracy_gain(accuracies: &[f64], window_w: usize) -> Result<f64> {
    if window_w < 1 {
        return Err(CoreError::Contract("window_w must be >= 1".into()));
    }
    if accuracies.len() < 2 * window_w {
        return Err(CoreError::Contract(format!(
            "series of {} too short for window_w {} (need >= {})",
            accuracies.len(),
            window_w,
            2 * window_w
        )));
    }
    let m = mean(accuracies);
    let sd = sample_std(accuracies);
    if sd == 0.0 {
        return Ok(0.0);
    }
    let z: Vec<f64> = accuracies.iter().map(|a| (a - m) / sd).collect();
    let sliding: Vec<f64> = z.windows(window_w).map(mean).collect();
    let first = mean(&sliding[..window_w]);
    let last = mean(&sliding[sliding.len() - window_w..]);
    Ok(last - first)
}

/// Collapse a window into the local state. `gain_window` is the sliding-window
/// width for the accuracy-gain feature.
pub fn aggregate_window(window: &AggregateWindow, gain_window: usize) -> Result<LocalState> {
    let outcomes = window.outcomes();
    let walls: Vec<f64> = outcomes.iter().map(|o| o.wall_time()).collect();
    let accuracies: Vec<f64> = outcomes.iter().map(|o| o.batch_accuracy).collect();

    let total_wall: f64 = walls.iter().sum();
    let total_cpu: f64 = outcomes
        .iter()
        .map(|o| o.cpu_time_ratio * o.wall_time())
        .sum();

    Ok(LocalState {
        tp: mean(&outcomes.iter().map(|o| o.throughput_bytes).collect::<Vec<_>>()),
        rtx: outcomes.iter().map(|o| o.retransmissions).sum(),
        cpu_ratio: total_cpu / total_wall,
        mem_util: mean(&outcomes.iter().map(|o| o.memory_utilization).collect::<Vec<_>>()),
        a_bar: mean(&accuracies),
        sigma_batch: sample_std(&accuracies),
        delta_a: accuracy_gain(&accuracies, gain_window)?,
        t_iter: mean(&walls),
        sigma_norm: mean(&outcomes.iter().map(|o| o.grad_norm_std).collect::<Vec<_>>()),
        sigma_norm_sq: mean(
            &outcomes
                .iter()
                .map(|o| o.grad_norm_std * o.grad_norm_std)
                .collect::<Vec<_>>(),
        ),
        batch_size_norm: batch_size_norm(outcomes[outcomes.len() - 1].batch_size),
    })
}

/// Per-feature divisors keeping policy inputs O(1). Accuracy-family features
/// are already in [0, 1] and stay raw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateNormalizers {
    pub throughput: f64,
    pub rtx: f64,
    pub cpu_ratio: f64,
    pub t_iter: f64,
    pub sigma_norm: f64,
    pub delta_a: f64,
}

impl Default for StateNormalizers {
    fn default() -> Self {
        Self {
            throughput: 1e9,
            rtx: 100.0,
            cpu_ratio: 4.0,
            t_iter: 1.0,
            sigma_norm: 1.0,
            delta_a: 1.0,
        }
    }
}

/// Fixed-order concatenation of the normalized local and global features.
/// Rejects non-finite features so a poisoned state never reaches the policy.
pub fn build_state_vector(
    local: &LocalState,
    global: &GlobalState,
    norms: &StateNormalizers,
) -> Result<Vec<f64>> {
    let v = vec![
        local.tp / norms.throughput,
        local.rtx as f64 / norms.rtx,
        local.cpu_ratio / norms.cpu_ratio,
        local.mem_util,
        local.a_bar,
        local.sigma_batch,
        local.delta_a / norms.delta_a,
        local.t_iter / norms.t_iter,
        local.sigma_norm / norms.sigma_norm,
        local.sigma_norm_sq / (norms.sigma_norm * norms.sigma_norm),
        local.batch_size_norm,
        global.loss_trend,
        global.val_accuracy_proxy,
        global.progress,
    ];
    debug_assert_eq!(v.len(), STATE_DIM);
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite(format!(
            "state vector contains {x}: {v:?}"
        )));
    }
    Ok(v)
}

/// Rolling view of the shared training signals, maintained at the arbitrator
/// and handed identically to every worker's decision.
#[derive(Debug, Clone, Default)]
pub struct GlobalTracker {
    loss_history: Vec<f64>,
}

impl GlobalTracker {
    /// Number of recent decision steps the loss-trend slope looks back over.
    pub const TREND_WINDOW: usize = 5;

    pub fn reset(&mut self) {
        self.loss_history.clear();
    }

    /// Record this step's global mean accuracy and produce the global state.
    /// `step` is the 0-based decision step, `total_steps` the episode length.
    pub fn observe(&mut self, global_mean_accuracy: f64, step: u64, total_steps: u64) -> GlobalState {
        self.loss_history.push(1.0 - global_mean_accuracy);
        let tail_len = self.loss_history.len().min(Self::TREND_WINDOW);
        let tail = &self.loss_history[self.loss_history.len() - tail_len..];
        let progress = if total_steps <= 1 {
            1.0
        } else {
            step as f64 / (total_steps - 1) as f64
        };
        GlobalState {
            loss_trend: slope(tail),
            val_accuracy_proxy: global_mean_accuracy,
            progress,
        }
    }
}

/// Least-squares slope of a series against its 0..n index; 0 for n < 2.
fn slope(ys: &[f64]) -> f64 {
    let n = ys.len();
    if n < 2 {
        return 0.0;
    }
    let xm = (n - 1) as f64 / 2.0;
    let ym = mean(ys);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xm;
        num += dx * (y - ym);
        den += dx * dx;
    }
    num / den
}
