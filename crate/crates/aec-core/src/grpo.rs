//! Group-relative policy optimization.
//!
//! Rewards are compared only within a rollout group (same task, same effort):
//! each group's rewards are standardized to advantages
//!
//! ```text
//! a_i = (r_i - mean(r)) / (std(r) + epsilon)        (population std)
//! ```
//!
//! so a rollout is pushed up exactly when it beat its siblings. A group whose
//! rewards are all equal carries no signal; it is flagged degenerate and its
//! advantages are zeroed, so it contributes nothing to the update beyond its
//! share of the batch normalization.
//!
//! The policy update ascends the PPO-style clipped surrogate
//! `mean_i min(rho_i * a_i, clip(rho_i, 1 - eps, 1 + eps) * a_i)` where
//! `rho_i` is the new/old probability ratio of the sampled bucket. With one
//! on-policy epoch per batch (the default here) `rho_i = 1` and clipping is
//! inert; the machinery exists so rollouts can be reused off-policy.

use serde::{Deserialize, Serialize};

use crate::policy::{action_distribution, Observation, PolicyParams};

/// Standardized within-group advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageGroup {
    pub advantages: Vec<f64>,
    /// True if the group's rewards were all equal (zero variance). The
    /// advantages are all zero in that case.
    pub degenerate: bool,
}

/// Default damping added to the group standard deviation.
pub const DEFAULT_ADVANTAGE_EPSILON: f64 = 1e-6;

/// Standardizes one group's rewards.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<AdvantageGroup, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if !(epsilon >= 0.0) {
        return Err(GrpoError::BadParameter("epsilon must be >= 0"));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite("reward"));
    }
    // All-equal detection by comparison, not by variance == 0: summing equal
    // floats can round to a nonzero variance and spuriously amplify noise.
    let all_equal = rewards.windows(2).all(|w| w[0] == w[1]);
    if all_equal {
        return Ok(AdvantageGroup { advantages: vec![0.0; rewards.len()], degenerate: true });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let advantages = rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect();
    Ok(AdvantageGroup { advantages, degenerate: false })
}

/// Per-rollout data the surrogate needs from one group. All rollouts of a
/// group share one observation; `old_log_probs` are the sampling-time log
/// probabilities of the chosen buckets.
#[derive(Debug, Clone)]
pub struct GroupRollouts {
    pub obs: Observation,
    pub buckets: Vec<usize>,
    pub old_log_probs: Vec<f64>,
}

/// Accumulated surrogate gradient over a batch of groups.
#[derive(Debug, Clone)]
pub struct SurrogateGradient {
    /// Same layout as the policy logits; already divided by the total number
    /// of rollouts in the batch.
    pub values: Vec<f64>,
    /// Fraction of rollouts whose gradient was suppressed by the clip.
    pub clipped_fraction: f64,
}

/// Gradient of the clipped surrogate objective with respect to `params`.
///
/// With `old_params == params` (ratios 1, clipping inert) this reduces to
/// `sum_i a_i * grad_log_prob_i / batch_size` where `batch_size` counts every
/// rollout in the batch, degenerate groups included.
pub fn surrogate_gradient(
    batch: &[(GroupRollouts, AdvantageGroup)],
    params: &PolicyParams,
    old_params: &PolicyParams,
    clip_ratio: f64,
) -> Result<SurrogateGradient, GrpoError> {
    if !(clip_ratio > 0.0) {
        return Err(GrpoError::BadParameter("clip_ratio must be > 0"));
    }
    if params.num_difficulty_bins() != old_params.num_difficulty_bins()
        || params.num_effort_bins() != old_params.num_effort_bins()
        || params.num_buckets() != old_params.num_buckets()
    {
        return Err(GrpoError::ShapeMismatch);
    }
    let total: usize = batch.iter().map(|(g, _)| g.buckets.len()).sum();
    if total == 0 {
        return Err(GrpoError::EmptyBatch);
    }

    let (lo, hi) = (1.0 - clip_ratio, 1.0 + clip_ratio);
    let mut grad = vec![0.0; params.len()];
    let mut clipped = 0usize;
    for (group, adv) in batch {
        if group.buckets.len() != adv.advantages.len()
            || group.buckets.len() != group.old_log_probs.len()
        {
            return Err(GrpoError::GroupSizeMismatch);
        }
        if adv.degenerate {
            continue; // all-zero advantages; only the denominator sees it
        }
        let dist = action_distribution(params, group.obs).map_err(GrpoError::Policy)?;
        let off = params.cell_offset(group.obs).map_err(GrpoError::Policy)?;
        for ((&bucket, &old_lp), &a) in
            group.buckets.iter().zip(&group.old_log_probs).zip(&adv.advantages)
        {
            if bucket >= dist.len() {
                return Err(GrpoError::Policy(crate::policy::PolicyError::BinOutOfRange {
                    axis: "bucket",
                    got: bucket,
                    len: dist.len(),
                }));
            }
            let rho = (dist[bucket].ln() - old_lp).exp();
            let unclipped = rho * a;
            let clipped_val = rho.clamp(lo, hi) * a;
            if unclipped <= clipped_val {
                // The min selects the live ratio term; its gradient is
                // a * rho * grad log pi.
                let coeff = a * rho;
                for (i, p) in dist.iter().enumerate() {
                    grad[off + i] += coeff * (if i == bucket { 1.0 } else { 0.0 } - p);
                }
            } else {
                clipped += 1; // min selects the clipped constant: zero gradient
            }
        }
    }
    for g in &mut grad {
        *g /= total as f64;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(GrpoError::NonFinite("gradient"));
    }
    Ok(SurrogateGradient { values: grad, clipped_fraction: clipped as f64 / total as f64 })
}

/// What one optimizer step did, for the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub step: u64,
    pub grad_norm: f64,
    pub clipped_fraction: f64,
    pub mean_reward: f64,
}

/// Applies one gradient-ascent step: `logits += learning_rate * gradient`.
pub fn apply_update(
    params: &PolicyParams,
    gradient: &SurrogateGradient,
    learning_rate: f64,
    step: u64,
    mean_reward: f64,
) -> Result<(PolicyParams, UpdateReport), GrpoError> {
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return Err(GrpoError::BadParameter("learning_rate must be finite and >= 0"));
    }
    if gradient.values.len() != params.len() {
        return Err(GrpoError::ShapeMismatch);
    }
    if gradient.values.iter().any(|g| !g.is_finite()) {
        return Err(GrpoError::NonFinite("gradient"));
    }
    let scaled: Vec<f64> = gradient.values.iter().map(|g| learning_rate * g).collect();
    let next = params.stepped(&scaled).map_err(GrpoError::Policy)?;
    let grad_norm = gradient.values.iter().map(|g| g * g).sum::<f64>().sqrt();
    let report = UpdateReport {
        step,
        grad_norm,
        clipped_fraction: gradient.clipped_fraction,
        mean_reward,
    };
    Ok((next, report))
}

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("rollout group has {0} rollouts; need at least 2")]
    GroupTooSmall(usize),
    #[error("group buckets, log probs, and advantages must have equal lengths")]
    GroupSizeMismatch,
    #[error("batch contains no rollouts")]
    EmptyBatch,
    #[error("parameter tensors have different shapes")]
    ShapeMismatch,
    #[error("non-finite {0} encountered")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
    #[error(transparent)]
    Policy(crate::policy::PolicyError),
}
