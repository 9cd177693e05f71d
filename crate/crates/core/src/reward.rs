//! Per-decision rewards for the SGD and adaptive-optimizer regimes, plus
//! discounted episode returns.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::simenv::{MAX_BATCH, MIN_BATCH};
use crate::Result;

/// Reward weights. All terms are normalized so each lands around O(0.1..1)
/// under the default simulator calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardCoefficients {
    /// Accuracy-gain amplification.
    pub alpha: f64,
    /// Iteration-time penalty (applied to normalized seconds).
    pub beta: f64,
    /// Batch-size regularization weight.
    pub delta: f64,
    /// Gradient-normalization penalty weight (adaptive regime only).
    pub eta: f64,
    /// Discount factor.
    pub gamma: f64,
}

impl Default for RewardCoefficients {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 0.5,
            delta: 0.05,
            eta: 0.5,
            gamma: 0.99,
        }
    }
}

impl RewardCoefficients {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
            ("eta", self.eta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::Config(format!(
                    "coefficient {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CoreError::Config(format!(
                "gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Which reward formula a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Sgd,
    Adaptive,
}

/// Signed breakdown of one reward; `value` is the exact sum of the parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub accuracy: f64,
    pub gain: f64,
    pub time: f64,
    pub regularization: f64,
    pub normalization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSample {
    pub step_index: u64,
    pub worker_id: u32,
    pub regime: Regime,
    pub value: f64,
    pub components: RewardComponents,
}

fn check_batch(batch_size: u32) -> Result<()> {
    if !(MIN_BATCH..=MAX_BATCH).contains(&batch_size) {
        return Err(CoreError::Contract(format!(
            "batch size {batch_size} outside [{MIN_BATCH}, {MAX_BATCH}]"
        )));
    }
    Ok(())
}

fn components_sgd(
    a_bar: f64,
    delta_a: f64,
    t_iter: f64,
    batch_size: u32,
    coeffs: &RewardCoefficients,
) -> Result<RewardComponents> {
    check_batch(batch_size)?;
    if !(t_iter > 0.0) {
        return Err(CoreError::Contract(format!(
            "t_iter must be > 0, got {t_iter}"
        )));
    }
    Ok(RewardComponents {
        accuracy: a_bar,
        gain: coeffs.alpha * delta_a.max(0.0),
        time: -coeffs.beta * t_iter,
        regularization: -coeffs.delta * ((batch_size as f64).log2() - 5.0),
        normalization: 0.0,
    })
}

fn finish(step_index: u64, worker_id: u32, regime: Regime, c: RewardComponents) -> RewardSample {
    RewardSample {
        step_index,
        worker_id,
        regime,
        value: c.accuracy + c.gain + c.time + c.regularization + c.normalization,
        components: c,
    }
}

/// r = A_bar + alpha*max(0, dA) - beta*T_iter - delta*(log2(B) - 5).
/// The gain term floors at zero; the regularization term is exactly zero at
/// the minimum batch size of 32.
pub fn reward_sgd(
    step_index: u64,
    worker_id: u32,
    a_bar: f64,
    delta_a: f64,
    t_iter: f64,
    batch_size: u32,
    coeffs: &RewardCoefficients,
) -> Result<RewardSample> {
    let c = components_sgd(a_bar, delta_a, t_iter, batch_size, coeffs)?;
    Ok(finish(step_index, worker_id, Regime::Sgd, c))
}

/// SGD reward minus the adaptive-optimizer stability penalty
/// eta * (sigma_norm^2 + sigma_norm).
#[allow(clippy::too_many_arguments)]
pub fn reward_adaptive(
    step_index: u64,
    worker_id: u32,
    a_bar: f64,
    delta_a: f64,
    t_iter: f64,
    sigma_norm: f64,
    sigma_norm_sq: f64,
    batch_size: u32,
    coeffs: &RewardCoefficients,
) -> Result<RewardSample> {
    if !(sigma_norm >= 0.0) {
        return Err(CoreError::Contract(format!(
            "sigma_norm must be >= 0, got {sigma_norm}"
        )));
    }
    let mut c = components_sgd(a_bar, delta_a, t_iter, batch_size, coeffs)?;
    c.normalization = -coeffs.eta * (sigma_norm_sq + sigma_norm);
    Ok(finish(step_index, worker_id, Regime::Adaptive, c))
}

/// Sum_t gamma^t * r_t with t starting at 0.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut weight = 1.0;
    for r in rewards {
        acc += weight * r;
        weight *= gamma;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coeffs(alpha: f64, beta: f64, delta: f64, eta: f64) -> RewardCoefficients {
        RewardCoefficients {
            alpha,
            beta,
            delta,
            eta,
            gamma: 0.99,
        }
    }

    #[test]
    fn regularization_is_zero_at_minimum_batch() {
        let s = reward_sgd(0, 0, 0.5, 0.0, 0.5, 32, &coeffs(2.0, 0.5, 0.05, 0.5)).unwrap();
        assert_eq!(s.components.regularization, 0.0);
    }

    #[test]
    fn negative_gain_is_neutral() {
        let s = reward_sgd(0, 0, 0.8, -0.1, 0.5, 128, &coeffs(2.0, 0.5, 0.05, 0.5)).unwrap();
        assert_eq!(s.components.gain, 0.0);
    }

    #[test]
    fn hand_evaluated_sgd_reward() {
        // 0.8 + 0.02 - 0.4*0.5 - 0.05*(log2(128)-5) = 0.8 + 0.02 - 0.2 - 0.1 = 0.52
        let s = reward_sgd(0, 0, 0.8, 0.02, 0.5, 128, &coeffs(1.0, 0.4, 0.05, 0.0)).unwrap();
        assert!((s.value - 0.52).abs() < 1e-12, "got {}", s.value);
    }

    #[test]
    fn adaptive_equals_sgd_at_zero_sigma() {
        let c = coeffs(2.0, 0.5, 0.05, 1.0);
        let sgd = reward_sgd(3, 1, 0.7, 0.1, 0.3, 256, &c).unwrap();
        let ada = reward_adaptive(3, 1, 0.7, 0.1, 0.3, 0.0, 0.0, 256, &c).unwrap();
        assert_eq!(sgd.value, ada.value);
    }

    #[test]
    fn adaptive_penalty_hand_evaluated() {
        // sigma 0.3, eta 1: subtract 0.09 + 0.3 = 0.39
        let c = coeffs(2.0, 0.5, 0.05, 1.0);
        let sgd = reward_sgd(0, 0, 0.7, 0.1, 0.3, 256, &c).unwrap();
        let ada = reward_adaptive(0, 0, 0.7, 0.1, 0.3, 0.3, 0.09, 256, &c).unwrap();
        assert!((sgd.value - ada.value - 0.39).abs() < 1e-12);
    }

    #[test]
    fn eta_zero_disables_penalty() {
        let c = coeffs(2.0, 0.5, 0.05, 0.0);
        let sgd = reward_sgd(0, 0, 0.7, 0.1, 0.3, 256, &c).unwrap();
        let ada = reward_adaptive(0, 0, 0.7, 0.1, 0.3, 0.9, 0.81, 256, &c).unwrap();
        assert_eq!(sgd.value, ada.value);
    }

    #[test]
    fn out_of_range_batch_rejected() {
        let c = coeffs(2.0, 0.5, 0.05, 0.5);
        for bad in [0u32, 31, 1025] {
            assert!(reward_sgd(0, 0, 0.5, 0.0, 0.5, bad, &c).is_err());
        }
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[3.0, 7.0, 9.0], 0.0), 3.0);
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 1.0), 3.0);
        // 1 + 0.5*2 + 0.25*4 = 3
        assert!((discounted_return(&[1.0, 2.0, 4.0], 0.5) - 3.0).abs() < 1e-12);
        assert_eq!(discounted_return(&[], 0.9), 0.0);
    }

    proptest! {
        #[test]
        fn value_reconstructs_from_components(
            a_bar in 0.0f64..1.0,
            delta_a in -3.0f64..3.0,
            t_iter in 0.01f64..5.0,
            batch in 32u32..=1024,
            sigma in 0.0f64..1.0,
        ) {
            let c = coeffs(2.0, 0.5, 0.05, 0.5);
            let s = reward_adaptive(0, 0, a_bar, delta_a, t_iter, sigma, sigma * sigma, batch, &c).unwrap();
            let parts = s.components;
            let sum = parts.accuracy + parts.gain + parts.time + parts.regularization + parts.normalization;
            prop_assert_eq!(s.value, sum);
        }

        #[test]
        fn monotonicity_properties(
            a_bar in 0.0f64..0.9,
            t_iter in 0.01f64..4.0,
            batch in 33u32..=1024,
        ) {
            let c = coeffs(2.0, 0.5, 0.05, 0.5);
            let base = reward_sgd(0, 0, a_bar, 0.0, t_iter, batch, &c).unwrap().value;
            // strictly increasing in a_bar
            let up = reward_sgd(0, 0, a_bar + 0.05, 0.0, t_iter, batch, &c).unwrap().value;
            prop_assert!(up > base);
            // strictly decreasing in t_iter
            let slower = reward_sgd(0, 0, a_bar, 0.0, t_iter + 0.1, batch, &c).unwrap().value;
            prop_assert!(slower < base);
            // strictly decreasing in batch above 32
            let smaller = reward_sgd(0, 0, a_bar, 0.0, t_iter, batch - 1, &c).unwrap().value;
            prop_assert!(smaller > base);
            // constant in delta_a below zero
            let neg = reward_sgd(0, 0, a_bar, -1.0, t_iter, batch, &c).unwrap().value;
            prop_assert_eq!(neg, base);
        }

        #[test]
        fn adaptive_never_exceeds_sgd(
            a_bar in 0.0f64..1.0,
            delta_a in -2.0f64..2.0,
            t_iter in 0.01f64..4.0,
            batch in 32u32..=1024,
            sigma in 0.0f64..2.0,
            eta in 0.0f64..2.0,
        ) {
            let c = coeffs(2.0, 0.5, 0.05, eta);
            let sgd = reward_sgd(0, 0, a_bar, delta_a, t_iter, batch, &c).unwrap().value;
            let ada = reward_adaptive(0, 0, a_bar, delta_a, t_iter, sigma, sigma * sigma, batch, &c).unwrap().value;
            prop_assert!(ada <= sgd + 1e-15);
        }

        #[test]
        fn return_satisfies_suffix_recurrence(
            rewards in proptest::collection::vec(-2.0f64..2.0, 0..20),
            tail in -2.0f64..2.0,
            gamma in 0.0f64..1.0,
        ) {
            let mut extended = rewards.clone();
            extended.push(tail);
            let lhs = discounted_return(&extended, gamma);
            let rhs = discounted_return(&rewards, gamma)
                + gamma.powi(rewards.len() as i32) * tail;
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
