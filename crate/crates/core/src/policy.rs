//! The centralized agent: a small tanh MLP over the 14-dim state emitting a
//! distribution over the five batch-size adjustments, trained by
//! return-weighted policy gradient with an optional clipped-surrogate mode.
//! Gradients are exact backpropagation; no autodiff dependency.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::metrics::STATE_DIM;
use crate::reward::RewardCoefficients;
use crate::Result;

pub const ACTION_COUNT: usize = 5;
/// Batch-size adjustments, fixed order; sampling ties resolve to the lowest index.
pub const ACTION_VALUES: [i32; ACTION_COUNT] = [-100, -25, 0, 25, 100];

/// One of the five discrete adjustments. Only the listed values are
/// constructible; index and value are in bijection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ActionDelta(u8);

impl ActionDelta {
    pub fn from_index(index: usize) -> Result<Self> {
        if index >= ACTION_COUNT {
            return Err(CoreError::Contract(format!(
                "action index {index} outside 0..{ACTION_COUNT}"
            )));
        }
        Ok(Self(index as u8))
    }

    pub fn from_value(value: i32) -> Result<Self> {
        ACTION_VALUES
            .iter()
            .position(|&v| v == value)
            .map(|i| Self(i as u8))
            .ok_or_else(|| CoreError::Contract(format!("{value} is not a valid action delta")))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn value(self) -> i32 {
        ACTION_VALUES[self.0 as usize]
    }

    pub fn no_op() -> Self {
        Self(2)
    }

    pub fn all() -> [Self; ACTION_COUNT] {
        [Self(0), Self(1), Self(2), Self(3), Self(4)]
    }
}

impl TryFrom<u8> for ActionDelta {
    type Error = CoreError;
    fn try_from(v: u8) -> Result<Self> {
        Self::from_index(v as usize)
    }
}

impl From<ActionDelta> for u8 {
    fn from(a: ActionDelta) -> u8 {
        a.0
    }
}

/// Dense layer, weights row-major `[rows x cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// MLP parameters (input STATE_DIM -> hidden -> hidden -> ACTION_COUNT) plus a
/// version counter that increases on every successful update.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    layers: Vec<Layer>,
    version: u64,
}

impl PolicyParams {
    /// Xavier-uniform initialization; the output layer is scaled down so the
    /// initial policy starts near uniform.
    pub fn init(hidden_dim: usize, seed: u64) -> Self {
        Self::init_with_prior(hidden_dim, seed, 0.0)
    }

    /// Initialization with an exploration prior: `up_bias` is added to the
    /// largest increment's output bias (and subtracted from the largest
    /// decrement's), so cold-start episodes visit the large-batch regime
    /// before the policy has any gradient signal.
    pub fn init_with_prior(hidden_dim: usize, seed: u64, up_bias: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [STATE_DIM, hidden_dim, hidden_dim, ACTION_COUNT];
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let (cols, rows) = (dims[i], dims[i + 1]);
            let scale = (6.0 / (cols + rows) as f64).sqrt()
                * if i == dims.len() - 2 { 0.1 } else { 1.0 };
            let w = (0..rows * cols)
                .map(|_| rng.random_range(-scale..scale))
                .collect();
            let mut b = vec![0.0; rows];
            if i == dims.len() - 2 {
                b[ACTION_COUNT - 1] += up_bias;
                b[0] -= up_bias;
            }
            layers.push(Layer { rows, cols, w, b });
        }
        Self { layers, version: 0 }
    }

    pub fn from_layers(layers: Vec<Layer>, version: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(CoreError::Contract("policy needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                return Err(CoreError::Contract(format!(
                    "layer {i} buffer sizes do not match {}x{}",
                    l.rows, l.cols
                )));
            }
            if l.w.iter().chain(&l.b).any(|x| !x.is_finite()) {
                return Err(CoreError::NonFinite(format!("layer {i} parameter")));
            }
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(CoreError::Contract(
                    "consecutive layer dimensions do not chain".into(),
                ));
            }
        }
        Ok(Self { layers, version })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flatten all parameters (per layer: weights row-major, then biases).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Rebuild parameters from a flat vector with this policy's shape.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.parameter_count() {
            return Err(CoreError::Contract(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut layers = self.layers.clone();
        let mut off = 0;
        for l in &mut layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Self::from_layers(layers, self.version)
    }
}

struct ForwardCache {
    /// activations[0] is the input; activations[i] the output of layer i-1
    /// after tanh (hidden layers) or raw (final logits).
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    fn logits(&self) -> &[f64] {
        &self.activations[self.activations.len() - 1]
    }
}

fn forward_cached(params: &PolicyParams, state: &[f64]) -> Result<ForwardCache> {
    if state.len() != params.input_dim() {
        return Err(CoreError::Contract(format!(
            "state dimension {} does not match policy input {}",
            state.len(),
            params.input_dim()
        )));
    }
    if state.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::NonFinite("state vector".into()));
    }
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(state.to_vec());
    let mut buf = Vec::new();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        layer.apply(&activations[i], &mut buf);
        if i != last {
            buf.iter_mut().for_each(|z| *z = z.tanh());
        }
        activations.push(buf.clone());
    }
    Ok(ForwardCache { activations })
}

/// Deterministic forward pass producing the five action logits.
pub fn forward(params: &PolicyParams, state: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_cached(params, state)?.logits().to_vec())
}

/// Max-subtracted softmax; outputs are non-negative and sum to 1.
pub fn action_distribution(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - lse).collect()
}

/// Inverse-CDF sampling over the fixed action order; ties resolve to the
/// lowest index. Returns the action and ln p(action).
pub fn sample_action(probabilities: &[f64], rng: &mut ChaCha8Rng) -> (ActionDelta, f64) {
    debug_assert_eq!(probabilities.len(), ACTION_COUNT);
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut chosen = ACTION_COUNT - 1;
    for (i, p) in probabilities.iter().enumerate() {
        cum += p;
        if u < cum {
            chosen = i;
            break;
        }
    }
    (
        ActionDelta(chosen as u8),
        probabilities[chosen].ln(),
    )
}

/// Highest-probability action; ties resolve to the lowest index.
pub fn argmax_action(probabilities: &[f64]) -> (ActionDelta, f64) {
    let mut best = 0;
    for i in 1..probabilities.len() {
        if probabilities[i] > probabilities[best] {
            best = i;
        }
    }
    (ActionDelta(best as u8), probabilities[best].ln())
}

/// Probability ratio pi_theta(a|s) / pi_theta_old(a|s), computed in log space.
pub fn ppo_ratio(
    params: &PolicyParams,
    params_old: &PolicyParams,
    state: &[f64],
    action: ActionDelta,
) -> Result<f64> {
    let new_lp = log_softmax(&forward(params, state)?)[action.index()];
    let old_lp = log_softmax(&forward(params_old, state)?)[action.index()];
    Ok((new_lp - old_lp).exp())
}

/// Clipped surrogate term: min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv).
pub fn clipped_objective(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    debug_assert!(epsilon > 0.0 && epsilon < 1.0);
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    (ratio * advantage).min(clipped)
}

/// Update algorithm selector: the return-weighted simplification, or the full
/// clipped surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    Simplified,
    Clipped,
}

/// Which constant is subtracted from returns before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// Raw returns.
    None,
    /// One mean over the whole update batch.
    BatchMean,
    /// Mean over records sharing a decision step (the other workers' returns
    /// at the same step); singleton groups fall back to the batch mean. This
    /// removes the return's step-index trend, which otherwise swamps the
    /// per-action signal in short runs.
    StepGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Clip range for the surrogate ratio.
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Entropy bonus weight; keeps the policy from collapsing in short runs.
    pub entropy_weight: f64,
    /// Per-episode multiplicative decay of the entropy weight (1.0 = constant);
    /// applied by the session layer, so exploration anneals over an
    /// episode-bounded run.
    pub entropy_decay: f64,
    pub mode: PolicyMode,
    pub baseline: BaselineMode,
    /// Ascent passes over the batch in clipped mode (simplified always runs one).
    pub clipped_epochs: usize,
    /// Global gradient-norm clip; None disables.
    pub grad_clip_norm: Option<f64>,
    pub hidden_dim: usize,
    /// Cold-start logit offset toward the largest increment (and away from
    /// the largest decrement); 0 starts uniform.
    pub exploration_prior: f64,
    /// Rescale advantages to unit standard deviation over the update batch,
    /// so the step size stays meaningful as returns shrink or grow.
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            learning_rate: 0.003,
            entropy_weight: 0.5,
            entropy_decay: 0.75,
            mode: PolicyMode::Simplified,
            baseline: BaselineMode::StepGroup,
            clipped_epochs: 4,
            grad_clip_norm: Some(5.0),
            hidden_dim: 64,
            exploration_prior: 0.0,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CoreError::Config(format!(
                "epsilon must be in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::Config("learning_rate must be > 0".into()));
        }
        if !(self.entropy_weight >= 0.0) {
            return Err(CoreError::Config("entropy_weight must be >= 0".into()));
        }
        if !(self.entropy_decay > 0.0 && self.entropy_decay <= 1.0) {
            return Err(CoreError::Config("entropy_decay must be in (0, 1]".into()));
        }
        if self.clipped_epochs == 0 {
            return Err(CoreError::Config("clipped_epochs must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(CoreError::Config("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// One decision record: the state seen, the action taken, the log-probability
/// at selection time, and the reward later credited to the action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: Vec<f64>,
    pub action: ActionDelta,
    pub log_prob: f64,
    pub reward: f64,
    pub worker_id: u32,
    pub step: u64,
}

/// Ordered decision records for one worker over one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

/// Reward-to-go of each suffix: G_t = r_t + gamma * G_{t+1}.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

struct GradBuf {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl GradBuf {
    fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            w: params.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: params.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    fn global_norm(&self) -> f64 {
        self.w
            .iter()
            .chain(self.b.iter())
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(self.b.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

fn flatten_trajectories(trajectories: &[Trajectory]) -> Vec<&TrajectoryStep> {
    trajectories.iter().flat_map(|t| t.steps.iter()).collect()
}

/// Advantages per record, flattened in trajectory order: reward-to-go minus
/// the configured baseline, optionally rescaled to unit batch std.
fn advantages(
    trajectories: &[Trajectory],
    gamma: f64,
    baseline: BaselineMode,
    normalize: bool,
) -> Vec<f64> {
    let mut returns = Vec::new();
    let mut steps = Vec::new();
    for t in trajectories {
        let rewards: Vec<f64> = t.steps.iter().map(|s| s.reward).collect();
        returns.extend(returns_to_go(&rewards, gamma));
        steps.extend(t.steps.iter().map(|s| s.step));
    }
    if returns.is_empty() {
        return returns;
    }
    let batch_mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let centered = match baseline {
        BaselineMode::None => returns,
        BaselineMode::BatchMean => returns.iter().map(|g| g - batch_mean).collect(),
        BaselineMode::StepGroup => {
            let mut sums: std::collections::HashMap<u64, (f64, u32)> =
                std::collections::HashMap::new();
            for (g, s) in returns.iter().zip(&steps) {
                let e = sums.entry(*s).or_insert((0.0, 0));
                e.0 += g;
                e.1 += 1;
            }
            returns
                .iter()
                .zip(&steps)
                .map(|(g, s)| {
                    let (sum, n) = sums[s];
                    if n > 1 {
                        g - sum / n as f64
                    } else {
                        g - batch_mean
                    }
                })
                .collect()
        }
    };
    if !normalize {
        return centered;
    }
    // Scale by the spread of returns around the batch mean, not by the spread
    // of the centered advantages: once behavior converges the advantages are
    // mostly noise, and dividing by their own std would re-amplify it.
    let scale = returns
        .iter()
        .map(|g| (g - batch_mean) * (g - batch_mean))
        .sum::<f64>()
        / returns.len() as f64;
    let std = scale.sqrt();
    if std > 1e-12 {
        centered.iter().map(|a| a / std).collect()
    } else {
        centered
    }
}

/// Entropy of a distribution, guarding p = 0 terms.
fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Mean objective and its exact gradient over the record batch. For each
/// record the per-record term is
///   simplified: adv * log pi(a|s) + entropy_weight * H(pi(.|s))
///   clipped:    min(r * adv, clip(r) * adv) + entropy_weight * H(pi(.|s))
/// where r is the ratio against `old` (required in clipped mode).
fn objective_and_grad(
    params: &PolicyParams,
    records: &[&TrajectoryStep],
    advs: &[f64],
    config: &PpoConfig,
    old: Option<&PolicyParams>,
) -> Result<(f64, GradBuf)> {
    let m = records.len() as f64;
    let mut grad = GradBuf::zeros_like(params);
    let mut objective = 0.0;
    let n_layers = params.layers.len();

    for (rec, &adv) in records.iter().zip(advs) {
        let cache = forward_cached(params, &rec.state)?;
        let logits = cache.logits();
        let p = action_distribution(logits);
        let logp = log_softmax(logits);
        let a = rec.action.index();

        // d(objective)/d(log pi(a|s)) for the policy term
        let coef = match config.mode {
            PolicyMode::Simplified => {
                objective += adv * logp[a];
                adv
            }
            PolicyMode::Clipped => {
                let old = old.expect("clipped mode requires old params");
                let old_lp = log_softmax(&forward(old, &rec.state)?)[a];
                let ratio = (logp[a] - old_lp).exp();
                let unclipped = ratio * adv;
                let clipped = ratio.clamp(1.0 - config.epsilon, 1.0 + config.epsilon) * adv;
                objective += unclipped.min(clipped);
                if unclipped <= clipped {
                    ratio * adv
                } else {
                    0.0
                }
            }
        };

        let h = entropy(&p);
        objective += config.entropy_weight * h;

        // dJ/dlogits: coef * (onehot - p) + entropy_weight * (-p * (ln p + H))
        let mut dlogits = vec![0.0; p.len()];
        for k in 0..p.len() {
            let onehot = if k == a { 1.0 } else { 0.0 };
            dlogits[k] = coef * (onehot - p[k]);
            if config.entropy_weight > 0.0 && p[k] > 0.0 {
                dlogits[k] += config.entropy_weight * (-p[k] * (p[k].ln() + h));
            }
        }

        // backprop through the dense/tanh stack
        let mut delta = dlogits;
        for li in (0..n_layers).rev() {
            let layer = &params.layers[li];
            let input = &cache.activations[li];
            for r in 0..layer.rows {
                grad.b[li][r] += delta[r];
                let row = &mut grad.w[li][r * layer.cols..(r + 1) * layer.cols];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += delta[r] * xi;
                }
            }
            if li > 0 {
                let mut next = vec![0.0; layer.cols];
                for r in 0..layer.rows {
                    let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                    for (nj, wj) in next.iter_mut().zip(row) {
                        *nj += delta[r] * wj;
                    }
                }
                // tanh'(z) = 1 - tanh(z)^2, and activations[li] stores tanh(z)
                for (nj, hj) in next.iter_mut().zip(input) {
                    *nj *= 1.0 - hj * hj;
                }
                delta = next;
            }
        }
    }

    grad.scale(1.0 / m);
    Ok((objective / m, grad))
}

/// The exact objective value `update_policy` ascends, exposed so tests can
/// finite-difference it. `old_params` supplies the ratio denominator in
/// clipped mode; pass the pre-update parameters there.
pub fn update_objective(
    params: &PolicyParams,
    trajectories: &[Trajectory],
    coeffs: &RewardCoefficients,
    config: &PpoConfig,
    old_params: Option<&PolicyParams>,
) -> Result<f64> {
    let records = flatten_trajectories(trajectories);
    if records.is_empty() {
        return Err(CoreError::Contract("empty trajectory set".into()));
    }
    let advs = advantages(trajectories, coeffs.gamma, config.baseline, config.normalize_advantages);
    let old = match config.mode {
        PolicyMode::Simplified => None,
        PolicyMode::Clipped => Some(old_params.unwrap_or(params)),
    };
    objective_and_grad(params, &records, &advs, config, old).map(|(j, _)| j)
}

fn validate_records(params: &PolicyParams, records: &[&TrajectoryStep]) -> Result<()> {
    for rec in records {
        if rec.state.len() != params.input_dim() {
            return Err(CoreError::Contract(format!(
                "trajectory state dim {} does not match policy input {}",
                rec.state.len(),
                params.input_dim()
            )));
        }
        if !rec.reward.is_finite() {
            return Err(CoreError::NonFinite(format!(
                "reward for worker {} step {}",
                rec.worker_id, rec.step
            )));
        }
        if !(rec.log_prob <= 0.0 && rec.log_prob.is_finite()) {
            return Err(CoreError::Contract(format!(
                "log_prob {} must be finite and <= 0",
                rec.log_prob
            )));
        }
    }
    Ok(())
}

/// One policy update over an episode's trajectories. Returns the new
/// parameters with the version bumped; the input is untouched. Rejects empty
/// batches and non-finite gradients.
pub fn update_policy(
    params: &PolicyParams,
    trajectories: &[Trajectory],
    coeffs: &RewardCoefficients,
    config: &PpoConfig,
) -> Result<PolicyParams> {
    config.validate()?;
    let records = flatten_trajectories(trajectories);
    if records.is_empty() {
        return Err(CoreError::Contract("empty trajectory set".into()));
    }
    validate_records(params, &records)?;
    let advs = advantages(trajectories, coeffs.gamma, config.baseline, config.normalize_advantages);

    let passes = match config.mode {
        PolicyMode::Simplified => 1,
        PolicyMode::Clipped => config.clipped_epochs,
    };
    let old = params.clone();
    let mut current = params.clone();
    for _ in 0..passes {
        let old_ref = match config.mode {
            PolicyMode::Simplified => None,
            PolicyMode::Clipped => Some(&old),
        };
        let (_, mut grad) = objective_and_grad(&current, &records, &advs, config, old_ref)?;
        if !grad.is_finite() {
            return Err(CoreError::NonFinite("policy gradient".into()));
        }
        if let Some(max_norm) = config.grad_clip_norm {
            let norm = grad.global_norm();
            if norm > max_norm {
                grad.scale(max_norm / norm);
            }
        }
        for (li, layer) in current.layers.iter_mut().enumerate() {
            for (wi, gi) in layer.w.iter_mut().zip(&grad.w[li]) {
                *wi += config.learning_rate * gi;
            }
            for (bi, gi) in layer.b.iter_mut().zip(&grad.b[li]) {
                *bi += config.learning_rate * gi;
            }
        }
        if current
            .layers
            .iter()
            .any(|l| l.w.iter().chain(&l.b).any(|x| !x.is_finite()))
        {
            return Err(CoreError::NonFinite("updated policy parameters".into()));
        }
    }
    current.version = params.version + 1;
    Ok(current)
}

/// Gradient of the update objective as a flat vector, for the gradient-check
/// oracle. Layout matches `PolicyParams::to_flat`.
pub fn update_gradient_flat(
    params: &PolicyParams,
    trajectories: &[Trajectory],
    coeffs: &RewardCoefficients,
    config: &PpoConfig,
    old_params: Option<&PolicyParams>,
) -> Result<Vec<f64>> {
    let records = flatten_trajectories(trajectories);
    if records.is_empty() {
        return Err(CoreError::Contract("empty trajectory set".into()));
    }
    let advs = advantages(trajectories, coeffs.gamma, config.baseline, config.normalize_advantages);
    let old = match config.mode {
        PolicyMode::Simplified => None,
        PolicyMode::Clipped => Some(old_params.unwrap_or(params)),
    };
    let (_, grad) = objective_and_grad(params, &records, &advs, config, old)?;
    let mut flat = Vec::with_capacity(params.parameter_count());
    for li in 0..params.layers.len() {
        flat.extend_from_slice(&grad.w[li]);
        flat.extend_from_slice(&grad.b[li]);
    }
    Ok(flat)
}
