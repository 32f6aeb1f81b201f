//! Reward definitions: adaptive effort control and its baselines.
//!
//! The adaptive effort control (AEC) reward multiplies binary correctness by
//! a length constraint that adapts to current ability:
//!
//! ```text
//! R_aec = 1[correct] * 1[ length / t_avg < r ]
//! t_avg = alpha * mean(length of correct rollouts in the group)
//! ```
//!
//! with `t_avg = INFINITE` (constraint trivially satisfied) when the group
//! solved nothing. Because the constraint is a pure ratio, it needs no
//! per-task tuning and follows the policy as it improves: as correct
//! solutions get shorter, the budget tightens. The effort parameter `r`
//! scales the budget per query.
//!
//! Baselines implemented for comparison:
//! - a fixed length penalty `1[correct] - (lambda / points) * length`,
//! - a hard budget (zero reward at/over a fixed cap, or a distance penalty
//!   around an exact target),
//! - plain correctness.
//!
//! Net reward `R - cost_lambda * length` is a reporting metric; it is only
//! ever a training signal for the `Plain` variant with the explicit
//! fold-in flag set.

use serde::{Deserialize, Serialize};

/// One (task, effort) pairing drawn for a rollout group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortQuery {
    pub task_id: String,
    /// Effort parameter in (0, 1].
    pub r: f64,
}

/// What the reward functions see of a single rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    /// Tokens spent, >= 1.
    pub length: u32,
    pub correct: bool,
    /// Log probability of the sampled length bucket at sampling time.
    pub log_prob: f64,
    /// Effort parameter the rollout was generated under.
    pub effort: f64,
}

/// Scaled mean length of a group's correct rollouts.
///
/// The no-correct-rollout case is an explicit variant rather than a sentinel
/// float, so forgetting to handle it is a type error, not a silent NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TAvg {
    Finite(f64),
    /// No correct rollout in the group; every length satisfies the
    /// constraint.
    Infinite,
}

impl TAvg {
    pub fn is_finite(self) -> bool {
        matches!(self, TAvg::Finite(_))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            TAvg::Finite(v) => Some(v),
            TAvg::Infinite => None,
        }
    }
}

/// A group of rollouts for one query, with its scaled mean solve length.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub query: EffortQuery,
    pub rollouts: Vec<RolloutRecord>,
    pub t_avg: TAvg,
}

impl RolloutGroup {
    /// Builds a group, computing `t_avg` from the rollouts under `alpha`.
    pub fn new(
        query: EffortQuery,
        rollouts: Vec<RolloutRecord>,
        alpha: f64,
    ) -> Result<Self, RewardError> {
        let t = t_avg(&rollouts, alpha)?;
        Ok(RolloutGroup { query, rollouts, t_avg: t })
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }
}

/// Hard-budget flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    /// Reward only correct rollouts strictly under the cap.
    Max,
    /// Reward correctness minus a distance penalty from the target length.
    Exact,
}

/// Which reward shapes the training signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RewardVariant {
    /// Adaptive effort control with budget scale `alpha`.
    Aec { alpha: f64 },
    /// `1[correct] - (lambda / points) * length`: a per-task-weight penalty
    /// that must be tuned to the token scale by hand.
    LengthPenalty { lambda: f64, points: u32 },
    /// Fixed token budget `t_max`.
    HardBudget { t_max: u32, mode: BudgetMode, delta: f64 },
    /// Correctness only.
    Plain,
}

/// A validated reward configuration for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub variant: RewardVariant,
    /// Token cost used by the net-reward *report* `J = R - cost_lambda * T`.
    pub cost_lambda: f64,
    /// Ablation only: folds `cost_lambda * length` into the Plain training
    /// reward. Ignored by every other variant.
    pub net_reward_training: bool,
}

impl RewardSpec {
    pub fn new(variant: RewardVariant) -> Self {
        RewardSpec { variant, cost_lambda: 0.0, net_reward_training: false }
    }

    /// The stock AEC configuration (`alpha = 2.5`).
    pub fn aec() -> Self {
        RewardSpec::new(RewardVariant::Aec { alpha: DEFAULT_ALPHA })
    }

    /// Hard budget with the default `delta = 1 / t_max` exact-mode slope, so
    /// the penalty reaches one full correctness unit at 100% deviation.
    pub fn hard_budget(t_max: u32, mode: BudgetMode) -> Self {
        RewardSpec::new(RewardVariant::HardBudget {
            t_max,
            mode,
            delta: if t_max > 0 { 1.0 / t_max as f64 } else { 0.0 },
        })
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        match &self.variant {
            RewardVariant::Aec { alpha } => {
                if !(*alpha > 0.0) {
                    return Err(RewardError::BadParameter("alpha must be > 0"));
                }
            }
            RewardVariant::LengthPenalty { lambda, points } => {
                if !(*lambda >= 0.0) {
                    return Err(RewardError::BadParameter("lambda must be >= 0"));
                }
                if *points == 0 {
                    return Err(RewardError::BadParameter("points must be >= 1"));
                }
            }
            RewardVariant::HardBudget { t_max, delta, .. } => {
                if *t_max == 0 {
                    return Err(RewardError::BadParameter("t_max must be >= 1"));
                }
                if !(*delta >= 0.0) {
                    return Err(RewardError::BadParameter("delta must be >= 0"));
                }
            }
            RewardVariant::Plain => {}
        }
        if !self.cost_lambda.is_finite() || self.cost_lambda < 0.0 {
            return Err(RewardError::BadParameter("cost_lambda must be finite and >= 0"));
        }
        Ok(())
    }

    /// Group-budget scale if this is the AEC variant.
    pub fn alpha(&self) -> Option<f64> {
        match self.variant {
            RewardVariant::Aec { alpha } => Some(alpha),
            _ => None,
        }
    }
}

/// Default AEC budget scale.
pub const DEFAULT_ALPHA: f64 = 2.5;

/// Scaled mean length of the correct rollouts: `alpha / n_s * sum(lengths)`,
/// or [`TAvg::Infinite`] when nothing was correct.
pub fn t_avg(rollouts: &[RolloutRecord], alpha: f64) -> Result<TAvg, RewardError> {
    if !(alpha > 0.0) {
        return Err(RewardError::BadParameter("alpha must be > 0"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in rollouts {
        if r.correct {
            sum += r.length as f64;
            n += 1;
        }
    }
    if n == 0 {
        Ok(TAvg::Infinite)
    } else {
        Ok(TAvg::Finite(alpha * (sum / n as f64)))
    }
}

/// The adaptive effort control reward: correctness gated by the relative
/// length constraint `length / t_avg < r` (strict).
pub fn aec_reward(rollout: &RolloutRecord, t_avg: TAvg, r: f64) -> Result<f64, RewardError> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(RewardError::EffortOutOfRange(r));
    }
    if !rollout.correct {
        return Ok(0.0);
    }
    let within = match t_avg {
        TAvg::Infinite => true,
        TAvg::Finite(t) => (rollout.length as f64) / t < r,
    };
    Ok(if within { 1.0 } else { 0.0 })
}

/// Fixed length penalty: `1[correct] - (lambda / points) * length`.
pub fn length_penalty_reward(
    rollout: &RolloutRecord,
    lambda: f64,
    points: u32,
) -> Result<f64, RewardError> {
    if !(lambda >= 0.0) {
        return Err(RewardError::BadParameter("lambda must be >= 0"));
    }
    if points == 0 {
        return Err(RewardError::BadParameter("points must be >= 1"));
    }
    let base = if rollout.correct { 1.0 } else { 0.0 };
    Ok(base - lambda / points as f64 * rollout.length as f64)
}

/// Hard budget reward. `Max` pays correct rollouts strictly under `t_max`;
/// `Exact` pays correctness minus `delta * |length - t_max|`.
pub fn hard_budget_reward(
    rollout: &RolloutRecord,
    t_max: u32,
    mode: BudgetMode,
    delta: f64,
) -> Result<f64, RewardError> {
    if t_max == 0 {
        return Err(RewardError::BadParameter("t_max must be >= 1"));
    }
    if !(delta >= 0.0) {
        return Err(RewardError::BadParameter("delta must be >= 0"));
    }
    let correct = if rollout.correct { 1.0 } else { 0.0 };
    match mode {
        BudgetMode::Max => Ok(if rollout.correct && rollout.length < t_max { 1.0 } else { 0.0 }),
        BudgetMode::Exact => {
            let dist = (rollout.length as f64 - t_max as f64).abs();
            Ok(correct - delta * dist)
        }
    }
}

/// Net reward `J = reward - cost_lambda * length`: the report-side metric
/// that prices tokens explicitly.
pub fn net_reward(reward: f64, cost_lambda: f64, length: u32) -> f64 {
    reward - cost_lambda * length as f64
}

/// Dispatches to the spec's active variant.
///
/// `group_t_avg` is consulted only by the AEC variant; AEC reads the effort
/// parameter off the rollout itself.
pub fn reward_for(
    spec: &RewardSpec,
    rollout: &RolloutRecord,
    group_t_avg: TAvg,
) -> Result<f64, RewardError> {
    match &spec.variant {
        RewardVariant::Aec { .. } => aec_reward(rollout, group_t_avg, rollout.effort),
        RewardVariant::LengthPenalty { lambda, points } => {
            length_penalty_reward(rollout, *lambda, *points)
        }
        RewardVariant::HardBudget { t_max, mode, delta } => {
            hard_budget_reward(rollout, *t_max, *mode, *delta)
        }
        RewardVariant::Plain => {
            let base = if rollout.correct { 1.0 } else { 0.0 };
            Ok(if spec.net_reward_training {
                net_reward(base, spec.cost_lambda, rollout.length)
            } else {
                base
            })
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("effort parameter {0} outside (0, 1]")]
    EffortOutOfRange(f64),
    #[error("invalid reward parameter: {0}")]
    BadParameter(&'static str),
}
