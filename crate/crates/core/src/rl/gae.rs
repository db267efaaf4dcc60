use crate::error::{Error, Result};

/// Floor on the advantage standard deviation during normalization.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

/// GAE(λ) over one environment's contiguous steps.
///
/// `dones[t]` marks that the episode ended after step `t`; the value after the
/// last step is `bootstrap`. Returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::LengthMismatch {
            what: "gae rewards/values",
            left: rewards.len(),
            right: values.len(),
        });
    }
    if rewards.len() != dones.len() {
        return Err(Error::LengthMismatch {
            what: "gae rewards/dones",
            left: rewards.len(),
            right: dones.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts to mean 0 and scales to unit (population) standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(ADVANTAGE_STD_FLOOR);
    adv.iter().map(|a| (a - mean) / std).collect()
}
