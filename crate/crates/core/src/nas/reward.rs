use serde::{Deserialize, Serialize};

use super::NasError;

/// Reward given to samples that violate the architecture invariants; below
/// every reachable latency-penalty reward near the budget.
pub const INVALID_REWARD: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// `(A - b) + L/rL` inside the budget.
    #[default]
    AsWritten,
    /// `(A - b) + (rL - L)/rL` inside the budget, so faster is better.
    Corrected,
}

/// `(rL - L)/rL - 1` over budget, otherwise the in-budget branch of `mode`.
pub fn compute_reward(
    accuracy: f64,
    latency_ms: f64,
    budget_ms: f64,
    baseline: f64,
    mode: RewardMode,
) -> Result<f64, NasError> {
    if !(budget_ms.is_finite() && budget_ms > 0.0) {
        return Err(NasError::Reward(format!("budget {budget_ms} must be positive")));
    }
    if !(latency_ms.is_finite() && latency_ms > 0.0) {
        return Err(NasError::Reward(format!("latency {latency_ms} must be positive")));
    }
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(NasError::Reward(format!("accuracy {accuracy} outside [0, 1]")));
    }
    if latency_ms > budget_ms {
        return Ok((budget_ms - latency_ms) / budget_ms - 1.0);
    }
    Ok(match mode {
        RewardMode::AsWritten => (accuracy - baseline) + latency_ms / budget_ms,
        RewardMode::Corrected => (accuracy - baseline) + (budget_ms - latency_ms) / budget_ms,
    })
}

/// Exponential moving average step `b' = beta*b + (1 - beta)*A`.
pub fn baseline_update(baseline: f64, accuracy: f64, beta: f64) -> f64 {
    beta * baseline + (1.0 - beta) * accuracy
}
