//! The training loop: rollouts, rewards, advantages, update, probes.
//!
//! Each step samples a batch of distinct training tasks, draws an effort
//! parameter per task, rolls out a group of length choices per query, scores
//! them with the configured reward, standardizes rewards within each group,
//! and ascends the clipped surrogate. At a fixed cadence the current policy
//! is probed on held-out validation tasks across the whole effort grid.
//!
//! Every random draw comes from a stream derived from `(seed, label)` where
//! the label names the event, for example `rollout/{step}/{task_id}/{k}`.
//! Nothing is drawn from a shared sequential stream, which gives two
//! properties: reruns are byte-identical, and a run checkpointed at step `s`
//! and resumed produces exactly the same parameters and log as an
//! uninterrupted run. Probe labels carry neither a step number nor an effort
//! value, so the same probe event reuses the same luck at every probe step
//! and at every effort level: learning curves move only when the policy
//! moves, and the untrained (effort-insensitive) policy probes identically
//! across the whole effort grid.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grpo::{self, GroupRollouts, UpdateReport};
use crate::policy::{self, Observation, PolicyParams};
use crate::rewards::{self, RewardSpec, RolloutRecord, TAvg};
use crate::seeding::derive_rng;
use crate::taskenv::{self, Split, Task, TaskSuite};

/// Format tag written into every checkpoint file.
pub const CHECKPOINT_FORMAT: &str = "aec-policy-checkpoint-v1";

/// Gradient epochs per batch. The first epoch is plain on-policy REINFORCE
/// (probability ratios are 1); later epochs reuse the batch off-policy with
/// the clipped surrogate bounding how far one batch can push the policy.
pub const GRPO_EPOCHS: usize = 4;

/// Default fraction of training rollouts whose length bucket is drawn
/// uniformly instead of from the policy.
pub const DEFAULT_EXPLORATION_RATE: f64 = 0.05;

/// Default weight of the KL penalty toward the uniform reference policy.
pub const DEFAULT_KL_BETA: f64 = 0.1;

/// Everything a training run needs besides the task suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Optimizer steps to run in total.
    pub steps: u64,
    /// Distinct tasks sampled per step.
    pub batch_queries: usize,
    /// Rollouts per task query (the advantage group size).
    pub rollouts_per_query: usize,
    /// Peak step size. The trainer decays it linearly to zero across the
    /// run, so early steps explore while late steps settle the policy near
    /// its equilibrium instead of leaving it wherever the last noisy batch
    /// pushed it.
    pub learning_rate: f64,
    pub clip_ratio: f64,
    /// Probability that a training rollout draws its length bucket uniformly
    /// from the grid instead of from the policy. Without it, a cell that
    /// concentrates on one bucket yields all-equal rewards, the standardized
    /// advantages vanish, and the cell freezes wherever it happens to stand;
    /// the uniform leak keeps every group contrastive so over-budget buckets
    /// keep losing mass. Training only: probes and evaluation sample the
    /// pure policy.
    pub exploration_rate: f64,
    /// Weight of the KL penalty toward the uniform reference policy. It
    /// balances the reward's pull toward the single best bucket, so each
    /// cell settles on a spread over its whole rewarded range rather than a
    /// point mass; the cell's mean length then tracks the budget cap, which
    /// is what makes mean tokens move smoothly with the effort parameter.
    /// Buckets outside the rewarded range equilibrate about `1 / kl_beta`
    /// nats below the rewarded ones, negligible mass for the default.
    pub kl_beta: f64,
    /// Damping added to the group reward std before normalizing.
    pub advantage_epsilon: f64,
    /// Hard cap on rollout length; longer samples are truncated and marked
    /// incorrect.
    pub max_length: u32,
    /// Probe the validation split every this many steps (and at steps 0 and
    /// `steps`).
    pub eval_interval: u64,
    /// Write a checkpoint every this many steps; 0 disables periodic
    /// checkpoints.
    pub checkpoint_interval: u64,
    pub probe_tasks_per_tier: usize,
    pub probe_rollouts_per_task: usize,
    /// Action space: the token length each bucket commits to.
    pub bucket_lengths: Vec<u32>,
    /// Effort values queries are drawn from; also the policy's effort axis.
    pub effort_grid: Vec<f64>,
    pub reward_spec: RewardSpec,
    pub seed: u64,
    /// Use a running per-tier average of correct lengths for the AEC budget
    /// instead of the per-group average.
    pub t_avg_running: bool,
    /// Freeze each task's effort parameter across the whole run instead of
    /// resampling it per step.
    pub fixed_task_effort: bool,
    /// Hide the difficulty tier from the policy (single difficulty bin).
    pub difficulty_blind: bool,
}

impl TrainConfig {
    /// Stock configuration for a reward variant and seed.
    pub fn new(reward_spec: RewardSpec, seed: u64) -> Self {
        TrainConfig {
            steps: 1000,
            batch_queries: 20,
            rollouts_per_query: 16,
            learning_rate: 10.0,
            clip_ratio: 0.2,
            exploration_rate: DEFAULT_EXPLORATION_RATE,
            kl_beta: DEFAULT_KL_BETA,
            advantage_epsilon: grpo::DEFAULT_ADVANTAGE_EPSILON,
            max_length: policy::DEFAULT_MAX_LENGTH,
            eval_interval: 25,
            checkpoint_interval: 250,
            probe_tasks_per_tier: 8,
            probe_rollouts_per_task: 16,
            bucket_lengths: policy::default_bucket_lengths(),
            effort_grid: policy::default_effort_grid(),
            reward_spec,
            seed,
            t_avg_running: false,
            fixed_task_effort: false,
            difficulty_blind: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.batch_queries == 0 {
            return Err(TrainerError::Config("batch_queries must be >= 1".into()));
        }
        if self.rollouts_per_query < 2 {
            return Err(TrainerError::Config(
                "rollouts_per_query must be >= 2 (group advantages need variance)".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainerError::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(self.clip_ratio > 0.0) {
            return Err(TrainerError::Config("clip_ratio must be > 0".into()));
        }
        if !(self.exploration_rate >= 0.0 && self.exploration_rate < 1.0) {
            return Err(TrainerError::Config(
                "exploration_rate must be in [0, 1)".into(),
            ));
        }
        if !self.kl_beta.is_finite() || self.kl_beta < 0.0 {
            return Err(TrainerError::Config("kl_beta must be finite and >= 0".into()));
        }
        if !(self.advantage_epsilon >= 0.0) {
            return Err(TrainerError::Config("advantage_epsilon must be >= 0".into()));
        }
        if self.max_length == 0 {
            return Err(TrainerError::Config("max_length must be >= 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(TrainerError::Config("eval_interval must be >= 1".into()));
        }
        if self.probe_tasks_per_tier == 0 || self.probe_rollouts_per_task == 0 {
            return Err(TrainerError::Config("probe sizes must be >= 1".into()));
        }
        // Axis validation is owned by the policy constructor.
        PolicyParams::uniform(1, self.bucket_lengths.clone(), self.effort_grid.clone())?;
        self.reward_spec.validate()?;
        Ok(())
    }
}

/// One probe measurement: the policy's behavior on one tier at one effort
/// value, in the current training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: u64,
    pub tier: String,
    pub r: f64,
    pub mean_tokens: f64,
    pub accuracy: f64,
    /// Mean training reward on the probe rollouts.
    pub mean_reward: f64,
    /// Gradient norm of the most recent update (0 before the first).
    pub grad_norm: f64,
}

/// Streaming mean used for the optional running AEC budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMean {
    pub sum: f64,
    pub count: u64,
}

impl RunningMean {
    pub fn push(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    pub fn mean(self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Complete training state. Serializing this is the checkpoint format; a
/// loaded state resumes to results byte-identical with an uninterrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    /// Must equal [`CHECKPOINT_FORMAT`].
    pub format: String,
    pub config: TrainConfig,
    /// Number of completed optimizer steps.
    pub step: u64,
    pub params: PolicyParams,
    /// Per-tier running mean of correct rollout lengths (tier order follows
    /// the suite); only consulted when `config.t_avg_running` is set.
    pub running_correct: Vec<RunningMean>,
    pub probes: Vec<ProbeRecord>,
    pub updates: Vec<UpdateReport>,
}

impl TrainerState {
    /// Fresh state: uniform policy sized to the suite's tiers.
    pub fn initial(config: TrainConfig, suite: &TaskSuite) -> Result<Self, TrainerError> {
        config.validate()?;
        let d = if config.difficulty_blind { 1 } else { suite.tiers().len() };
        let params =
            PolicyParams::uniform(d, config.bucket_lengths.clone(), config.effort_grid.clone())?;
        Ok(TrainerState {
            format: CHECKPOINT_FORMAT.to_string(),
            config,
            step: 0,
            params,
            running_correct: vec![RunningMean::default(); suite.tiers().len()],
            probes: Vec::new(),
            updates: Vec::new(),
        })
    }
}

/// Trains from scratch. Writes periodic checkpoints into `checkpoint_dir`
/// when given (plus `checkpoint_final.json` at the end).
pub fn train(
    config: &TrainConfig,
    suite: &TaskSuite,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainerState, TrainerError> {
    let state = TrainerState::initial(config.clone(), suite)?;
    train_from_state(state, suite, checkpoint_dir)
}

/// Continues a (possibly loaded) state until `config.steps` completed steps.
pub fn train_from_state(
    mut state: TrainerState,
    suite: &TaskSuite,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainerState, TrainerError> {
    state.config.validate()?;
    check_state_matches_suite(&state, suite)?;
    if state.config.steps == 0 {
        return Ok(state); // nothing trained, nothing logged
    }
    while state.step < state.config.steps {
        if state.step % state.config.eval_interval == 0 {
            probe_if_new(&mut state, suite)?;
        }
        let report = train_step(&mut state, suite)?;
        state.updates.push(report);
        state.step += 1;
        let interval = state.config.checkpoint_interval;
        if interval > 0 && state.step % interval == 0 {
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(&state, &dir.join(format!("checkpoint_{:06}.json", state.step)))?;
            }
        }
    }
    probe_if_new(&mut state, suite)?;
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&state, &dir.join("checkpoint_final.json"))?;
    }
    Ok(state)
}

fn check_state_matches_suite(state: &TrainerState, suite: &TaskSuite) -> Result<(), TrainerError> {
    let want_d = if state.config.difficulty_blind { 1 } else { suite.tiers().len() };
    if state.params.num_difficulty_bins() != want_d {
        return Err(TrainerError::Config(format!(
            "policy has {} difficulty bins but the suite implies {}",
            state.params.num_difficulty_bins(),
            want_d
        )));
    }
    if state.running_correct.len() != suite.tiers().len() {
        return Err(TrainerError::Config(format!(
            "state tracks {} tiers but the suite has {}",
            state.running_correct.len(),
            suite.tiers().len()
        )));
    }
    Ok(())
}

/// Atomically writes `state` as pretty JSON (tmp file + rename).
pub fn save_checkpoint(state: &TrainerState, path: &Path) -> Result<(), TrainerError> {
    let mut json = serde_json::to_string_pretty(state)?;
    json.push('\n');
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, json.as_bytes())?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Loads and validates a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainerState, TrainerError> {
    let text = fs::read_to_string(path)?;
    let state: TrainerState = serde_json::from_str(&text)?;
    if state.format != CHECKPOINT_FORMAT {
        return Err(TrainerError::CheckpointFormat { found: state.format });
    }
    state.config.validate()?;
    Ok(state)
}

/// One optimizer step: sample batch, score, standardize, ascend.
fn train_step(state: &mut TrainerState, suite: &TaskSuite) -> Result<UpdateReport, TrainerError> {
    let cfg = state.config.clone();
    let step = state.step;
    let train_tasks = suite.tasks_in(Split::Train);
    if train_tasks.len() < cfg.batch_queries {
        return Err(TrainerError::InsufficientTasks {
            split: Split::Train,
            need: cfg.batch_queries,
            have: train_tasks.len(),
        });
    }
    let mut batch_rng = derive_rng(cfg.seed, &format!("batch/{step}"));
    let picks = rand::seq::index::sample(&mut batch_rng, train_tasks.len(), cfg.batch_queries);

    let mut batch = Vec::with_capacity(cfg.batch_queries);
    let mut reward_sum = 0.0;
    let mut reward_count = 0usize;
    let mut correct_lengths: Vec<(usize, u32)> = Vec::new();
    for idx in picks.iter() {
        let task = train_tasks[idx];
        let tier_idx = suite
            .tier_index(&task.tier)
            .ok_or_else(|| TrainerError::Config(format!("task tier '{}' not in suite", task.tier)))?;
        let r = pick_effort(&cfg, step, &task.id);
        let obs = observation_for(&cfg, &state.params, tier_idx, r)?;
        let group = sample_rollout_group(
            &state.params,
            obs,
            task,
            r,
            cfg.rollouts_per_query,
            cfg.max_length,
            cfg.exploration_rate,
            cfg.seed,
            &format!("rollout/{step}/{}", task.id),
        )?;

        let budget = training_t_avg(&cfg, &state.running_correct, tier_idx, &group.rollouts)?;
        let rewards: Vec<f64> = group
            .rollouts
            .iter()
            .map(|ro| rewards::reward_for(&cfg.reward_spec, ro, budget))
            .collect::<Result<_, _>>()?;
        reward_sum += rewards.iter().sum::<f64>();
        reward_count += rewards.len();
        for ro in &group.rollouts {
            if ro.correct {
                correct_lengths.push((tier_idx, ro.length));
            }
        }
        let shaped = shaped_rewards(
            &rewards,
            &group.old_log_probs,
            cfg.kl_beta,
            state.params.num_buckets(),
        );
        let adv = grpo::group_advantages(&shaped, cfg.advantage_epsilon)?;
        batch.push((
            GroupRollouts { obs, buckets: group.buckets, old_log_probs: group.old_log_probs },
            adv,
        ));
    }

    // Several clipped epochs on the same batch, as in standard GRPO: the
    // sampling policy stays the probability-ratio anchor, and the clip stops
    // any bucket from moving far past `clip_ratio` within one batch.
    let old_params = state.params.clone();
    let mean_reward = reward_sum / reward_count as f64;
    let lr = scheduled_lr(&cfg, step);
    let mut report = None;
    for _ in 0..GRPO_EPOCHS {
        let mut grad = grpo::surrogate_gradient(&batch, &state.params, &old_params, cfg.clip_ratio)?;
        add_kl_gradient(&mut grad, &state.params, &batch, cfg.kl_beta)?;
        let (next, rep) = grpo::apply_update(&state.params, &grad, lr, step, mean_reward)?;
        state.params = next;
        report = Some(rep);
    }
    let report = report.expect("GRPO_EPOCHS >= 1");
    // The running budget sees this step's outcomes only from the next step
    // on, so group order within a step cannot matter.
    for (tier_idx, length) in correct_lengths {
        state.running_correct[tier_idx].push(length as f64);
    }
    Ok(report)
}

/// Linear decay from the configured peak toward zero over the run; the first
/// step uses the peak, the last uses `peak / steps`.
fn scheduled_lr(cfg: &TrainConfig, step: u64) -> f64 {
    cfg.learning_rate * (1.0 - step as f64 / cfg.steps as f64)
}

/// Adds the ascent gradient of `-kl_beta * KL(pi_cell || uniform)` to the
/// surrogate gradient, once per group, weighted like the surrogate itself
/// (each rollout carries one share of the batch mean).
///
/// Unlike the advantage term, this is applied to every group, including those
/// whose rollouts all earned the same reward: a cell producing only
/// degenerate groups would otherwise never receive a gradient again.
fn add_kl_gradient(
    grad: &mut grpo::SurrogateGradient,
    params: &PolicyParams,
    batch: &[(grpo::GroupRollouts, grpo::AdvantageGroup)],
    kl_beta: f64,
) -> Result<(), TrainerError> {
    if kl_beta == 0.0 || batch.is_empty() {
        return Ok(());
    }
    let total: usize = batch.iter().map(|(group, _)| group.buckets.len()).sum();
    if total == 0 {
        return Ok(());
    }
    for (group, _) in batch {
        let pi = policy::action_distribution(params, group.obs)?;
        let off = params.cell_offset(group.obs)?;
        let k = pi.len() as f64;
        // KL(pi || uniform) = sum_b pi_b * ln(pi_b * K); zero-probability
        // buckets contribute nothing but would evaluate ln(0) if included.
        let kl: f64 = pi
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * (p * k).ln())
            .sum();
        let weight = kl_beta * group.buckets.len() as f64 / total as f64;
        for (b, &p) in pi.iter().enumerate() {
            if p > 0.0 {
                grad.values[off + b] -= weight * p * ((p * k).ln() - kl);
            }
        }
    }
    Ok(())
}

/// Effort parameter for one query, drawn from the grid.
fn pick_effort(cfg: &TrainConfig, step: u64, task_id: &str) -> f64 {
    let label = if cfg.fixed_task_effort {
        format!("effort/fixed/{task_id}")
    } else {
        format!("effort/{step}/{task_id}")
    };
    let mut rng = derive_rng(cfg.seed, &label);
    cfg.effort_grid[rng.random_range(0..cfg.effort_grid.len())]
}

fn observation_for(
    cfg: &TrainConfig,
    params: &PolicyParams,
    tier_idx: usize,
    r: f64,
) -> Result<Observation, TrainerError> {
    let effort_bin = params
        .effort_bin_for(r)
        .ok_or_else(|| TrainerError::Config(format!("effort {r} not on the policy's grid")))?;
    let difficulty_bin = if cfg.difficulty_blind { 0 } else { tier_idx };
    Ok(Observation { difficulty_bin, effort_bin })
}

/// AEC budget for one training group. The default is the group's own scaled
/// mean of correct lengths; with `t_avg_running` the per-tier running mean is
/// used once it has data (before that, the group mean bootstraps it).
fn training_t_avg(
    cfg: &TrainConfig,
    running: &[RunningMean],
    tier_idx: usize,
    rollouts: &[RolloutRecord],
) -> Result<TAvg, TrainerError> {
    let Some(alpha) = cfg.reward_spec.alpha() else {
        return Ok(TAvg::Infinite); // only the AEC variant reads the budget
    };
    if cfg.t_avg_running {
        if let Some(mean) = running[tier_idx].mean() {
            return Ok(TAvg::Finite(alpha * mean));
        }
    }
    Ok(rewards::t_avg(rollouts, alpha)?)
}

/// One observation's worth of sampled rollouts.
struct SampledGroup {
    buckets: Vec<usize>,
    old_log_probs: Vec<f64>,
    rollouts: Vec<RolloutRecord>,
}

/// One sampled length choice plus the attempt it paid for.
pub(crate) struct SampledRollout {
    pub bucket: usize,
    pub log_prob: f64,
    pub length: u32,
    pub correct: bool,
}

/// Samples a length from the policy and attempts the task at it. A sample
/// over `max_length` is truncated to the cap and marked incorrect without an
/// attempt, the analog of a thought cut off by the context window. The rng
/// is consumed in a fixed order: exploration coin (only when the rate is
/// nonzero), bucket draw, then correctness coin.
pub(crate) fn sample_rollout<R: Rng + ?Sized>(
    params: &PolicyParams,
    obs: Observation,
    task: &Task,
    max_length: u32,
    exploration_rate: f64,
    rng: &mut R,
) -> Result<SampledRollout, crate::policy::PolicyError> {
    let sample = policy::sample_length_explored(params, obs, exploration_rate, rng)?;
    let (length, correct) = if sample.length > max_length {
        (max_length, false)
    } else {
        let outcome = taskenv::attempt(task, sample.length, rng);
        (outcome.length, outcome.correct)
    };
    Ok(SampledRollout { bucket: sample.bucket, log_prob: sample.log_prob, length, correct })
}

/// Rolls out `n` length choices for one query and attempts the task at each.
/// Rollout `k` draws from the stream `(seed, "{prefix}/{k}")`.
#[allow(clippy::too_many_arguments)]
fn sample_rollout_group(
    params: &PolicyParams,
    obs: Observation,
    task: &Task,
    r: f64,
    n: usize,
    max_length: u32,
    exploration_rate: f64,
    seed: u64,
    prefix: &str,
) -> Result<SampledGroup, TrainerError> {
    let mut buckets = Vec::with_capacity(n);
    let mut old_log_probs = Vec::with_capacity(n);
    let mut rollouts = Vec::with_capacity(n);
    for k in 0..n {
        let mut rng = derive_rng(seed, &format!("{prefix}/{k}"));
        let s = sample_rollout(params, obs, task, max_length, exploration_rate, &mut rng)?;
        buckets.push(s.bucket);
        old_log_probs.push(s.log_prob);
        rollouts.push(RolloutRecord {
            length: s.length,
            correct: s.correct,
            log_prob: s.log_prob,
            effort: r,
        });
    }
    Ok(SampledGroup { buckets, old_log_probs, rollouts })
}

/// Probes the validation split unless the last probe already covered this
/// step (which happens when a resumed run re-enters a probe step).
fn probe_if_new(state: &mut TrainerState, suite: &TaskSuite) -> Result<(), TrainerError> {
    if state.probes.last().map(|p| p.step) == Some(state.step) {
        return Ok(());
    }
    let records = probe(state, suite)?;
    state.probes.extend(records);
    Ok(())
}

/// Measures the current policy on every (tier, effort) pair, using held-out
/// validation tasks. Tiers with no validation tasks are skipped. Probe labels
/// contain no step number, so successive probes of one event share random
/// draws and curves over steps move only when the policy moves.
fn probe(state: &TrainerState, suite: &TaskSuite) -> Result<Vec<ProbeRecord>, TrainerError> {
    let cfg = &state.config;
    let grad_norm = state.updates.last().map(|u| u.grad_norm).unwrap_or(0.0);
    let mut out = Vec::new();
    for (tier_idx, tier) in suite.tiers().iter().enumerate() {
        let tasks = suite.tasks_in_tier(Split::Validation, tier);
        if tasks.is_empty() {
            continue;
        }
        if tasks.len() < cfg.probe_tasks_per_tier {
            return Err(TrainerError::InsufficientValidationTasks {
                tier: tier.clone(),
                need: cfg.probe_tasks_per_tier,
                have: tasks.len(),
            });
        }
        let tasks = &tasks[..cfg.probe_tasks_per_tier];
        for &r in state.params.effort_grid() {
            let mut tokens = 0.0;
            let mut correct = 0.0;
            let mut reward = 0.0;
            let mut n = 0usize;
            for task in tasks {
                let obs = observation_for(cfg, &state.params, tier_idx, r)?;
                let group = sample_rollout_group(
                    &state.params,
                    obs,
                    task,
                    r,
                    cfg.probe_rollouts_per_task,
                    cfg.max_length,
                    0.0, // probes measure the pure policy, no exploration
                    cfg.seed,
                    // No effort component in the label: every effort value
                    // reuses the same draws, so at step 0 (effort-insensitive
                    // uniform policy) probe rows are identical across r, and
                    // later rows differ only where the policy differs.
                    &format!("probe/{tier}/{}", task.id),
                )?;
                // Probes always score with the per-group budget: they are
                // measurements, not training state.
                let budget = match cfg.reward_spec.alpha() {
                    Some(alpha) => rewards::t_avg(&group.rollouts, alpha)?,
                    None => TAvg::Infinite,
                };
                for ro in &group.rollouts {
                    tokens += ro.length as f64;
                    correct += if ro.correct { 1.0 } else { 0.0 };
                    reward += rewards::reward_for(&cfg.reward_spec, ro, budget)?;
                    n += 1;
                }
            }
            let n = n as f64;
            out.push(ProbeRecord {
                step: state.step,
                tier: tier.clone(),
                r,
                mean_tokens: tokens / n,
                accuracy: correct / n,
                mean_reward: reward / n,
                grad_norm,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("need {need} distinct {split} tasks, suite has {have}")]
    InsufficientTasks { split: Split, need: usize, have: usize },
    #[error("tier '{tier}' has {have} validation tasks, probes need {need}")]
    InsufficientValidationTasks { tier: String, need: usize, have: usize },
    #[error("not a checkpoint of this crate (format tag '{found}')")]
    CheckpointFormat { found: String },
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Reward(#[from] crate::rewards::RewardError),
    #[error(transparent)]
    Grpo(#[from] crate::grpo::GrpoError),
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::RewardVariant;
    use crate::taskenv::{generate_suite, TierSpec};

    fn tiny_suite() -> TaskSuite {
        let train = generate_suite(
            &[
                TierSpec::new("easy", 6, 30.0, 80.0, 0.0),
                TierSpec::new("hard", 6, 600.0, 1600.0, 0.0),
            ],
            Split::Train,
            7,
        )
        .unwrap();
        let val = generate_suite(
            &[
                TierSpec::new("easy", 3, 30.0, 80.0, 0.0),
                TierSpec::new("hard", 3, 600.0, 1600.0, 0.0),
            ],
            Split::Validation,
            7,
        )
        .unwrap();
        train.merge(val).unwrap()
    }

    fn tiny_config(seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(RewardSpec::aec(), seed);
        cfg.steps = 6;
        cfg.batch_queries = 4;
        cfg.rollouts_per_query = 4;
        cfg.eval_interval = 3;
        cfg.checkpoint_interval = 0;
        cfg.probe_tasks_per_tier = 2;
        cfg.probe_rollouts_per_task = 4;
        cfg.bucket_lengths = vec![8, 32, 128, 512, 2048];
        cfg.effort_grid = vec![0.5, 1.0];
        cfg
    }

    fn state_json(state: &TrainerState) -> String {
        serde_json::to_string(state).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let suite = tiny_suite();
        let a = train(&tiny_config(11), &suite, None).unwrap();
        let b = train(&tiny_config(11), &suite, None).unwrap();
        assert_eq!(state_json(&a), state_json(&b));
        let c = train(&tiny_config(12), &suite, None).unwrap();
        assert_ne!(state_json(&a), state_json(&c), "seed must matter");
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        // The planned horizon rides in the checkpointed config, so a resumed
        // run continues the same learning-rate schedule and lands on the
        // exact same state as the uninterrupted run.
        let suite = tiny_suite();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(21);
        cfg.checkpoint_interval = 3;
        let full = train(&cfg, &suite, Some(dir.path())).unwrap();

        let mid = load_checkpoint(&dir.path().join("checkpoint_000003.json")).unwrap();
        assert_eq!(mid.step, 3);
        let resumed = train_from_state(mid, &suite, None).unwrap();
        assert_eq!(state_json(&full), state_json(&resumed));
    }

    #[test]
    fn learning_rate_decays_linearly_to_zero() {
        let mut cfg = tiny_config(1);
        cfg.steps = 4;
        cfg.learning_rate = 2.0;
        assert_eq!(scheduled_lr(&cfg, 0), 2.0);
        assert_eq!(scheduled_lr(&cfg, 1), 1.5);
        assert_eq!(scheduled_lr(&cfg, 3), 0.5);
        cfg.steps = 1;
        assert_eq!(scheduled_lr(&cfg, 0), 2.0, "single-step runs use the peak");
    }

    #[test]
    fn exploration_rate_zero_matches_the_plain_sampler() {
        let params = PolicyParams::new(
            1,
            vec![8, 16, 32, 64],
            vec![1.0],
            vec![0.4, -0.8, 1.3, 0.0],
        )
        .unwrap();
        let obs = Observation { difficulty_bin: 0, effort_bin: 0 };
        for i in 0..50 {
            let mut a = derive_rng(9, &format!("explore-zero/{i}"));
            let mut b = derive_rng(9, &format!("explore-zero/{i}"));
            let plain = policy::sample_length(&params, obs, &mut a).unwrap();
            let explored =
                policy::sample_length_explored(&params, obs, 0.0, &mut b).unwrap();
            assert_eq!(plain, explored);
            // Both consumed the same number of draws.
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn exploration_mixes_uniform_buckets_into_a_peaked_cell() {
        // A near-collapsed cell: the plain sampler almost never leaves the
        // peak, the explored sampler visits other buckets about
        // rate * (k - 1) / k of the time, always reporting the policy's own
        // log probability for whatever it drew.
        let params = PolicyParams::new(
            1,
            vec![8, 16, 32, 64],
            vec![1.0],
            vec![30.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let obs = Observation { difficulty_bin: 0, effort_bin: 0 };
        let probs = policy::action_distribution(&params, obs).unwrap();
        let n = 4000;
        let mut off_peak = 0;
        for i in 0..n {
            let mut rng = derive_rng(11, &format!("explore-mix/{i}"));
            let s = policy::sample_length_explored(&params, obs, 0.4, &mut rng).unwrap();
            if s.bucket != 0 {
                off_peak += 1;
            }
            let expected = probs[s.bucket].ln().max(policy::LOG_PROB_FLOOR);
            assert_eq!(s.log_prob, expected);
            assert!(s.log_prob.is_finite());
        }
        let freq = off_peak as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.03, "off-peak rate {freq}, expected ~0.3");
    }

    #[test]
    fn exploration_keeps_training_reactive_after_collapse() {
        // Freeze-in check: run a short training burst starting from a policy
        // hand-collapsed onto a bucket every task solves comfortably (easy
        // tasks only, so no tier injects failures of its own). With
        // exploration the collapsed cells keep producing contrastive groups
        // and move; without it every group is all-correct, hence degenerate,
        // and the parameters stay put.
        let train =
            generate_suite(&[TierSpec::new("easy", 6, 30.0, 80.0, 0.0)], Split::Train, 7)
                .unwrap();
        let val = generate_suite(
            &[TierSpec::new("easy", 3, 30.0, 80.0, 0.0)],
            Split::Validation,
            7,
        )
        .unwrap();
        let suite = train.merge(val).unwrap();
        let mut cfg = tiny_config(61);
        cfg.steps = 3;
        let mut frozen = TrainerState::initial(cfg.clone(), &suite).unwrap();
        let k = frozen.params.num_buckets();
        let collapsed: Vec<f64> = (0..frozen.params.len())
            .map(|i| if i % k == k - 1 { 25.0 } else { 0.0 })
            .collect();
        frozen.params = PolicyParams::new(
            frozen.params.num_difficulty_bins(),
            cfg.bucket_lengths.clone(),
            cfg.effort_grid.clone(),
            collapsed,
        )
        .unwrap();

        let mut with_exploration = frozen.clone();
        with_exploration.config.exploration_rate = 0.3;
        let moved = train_from_state(with_exploration, &suite, None).unwrap();
        assert_ne!(
            moved.params.logits(),
            frozen.params.logits(),
            "exploration must unfreeze a collapsed policy"
        );

        let mut without = frozen.clone();
        without.config.exploration_rate = 0.0;
        without.config.kl_beta = 0.0;
        let stuck = train_from_state(without, &suite, None).unwrap();
        assert_eq!(
            stuck.params.logits(),
            frozen.params.logits(),
            "a collapsed policy with neither exploration nor the KL penalty \
             sees only degenerate groups and cannot move"
        );
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let logits = vec![0.5, -0.3, 0.2, 0.0];
        let params =
            PolicyParams::new(1, vec![8, 16, 32, 64], vec![1.0], logits.clone()).unwrap();
        let obs = Observation { difficulty_bin: 0, effort_bin: 0 };
        let group = GroupRollouts {
            obs,
            buckets: vec![0, 1],
            old_log_probs: vec![-1.0, -1.0],
        };
        let adv = grpo::AdvantageGroup { advantages: vec![0.0, 0.0], degenerate: true };
        let batch = vec![(group, adv)];
        let beta = 0.7;

        let mut grad = grpo::SurrogateGradient {
            values: vec![0.0; logits.len()],
            clipped_fraction: 0.0,
        };
        add_kl_gradient(&mut grad, &params, &batch, beta).unwrap();

        // Oracle: central differences of the objective -beta * KL(pi || u).
        let objective = |l: &[f64]| {
            let p = PolicyParams::new(1, vec![8, 16, 32, 64], vec![1.0], l.to_vec()).unwrap();
            let pi = policy::action_distribution(&p, obs).unwrap();
            let k = pi.len() as f64;
            let kl: f64 = pi.iter().filter(|&&x| x > 0.0).map(|&x| x * (x * k).ln()).sum();
            -beta * kl
        };
        let h = 1e-6;
        for b in 0..logits.len() {
            let mut up = logits.clone();
            up[b] += h;
            let mut down = logits.clone();
            down[b] -= h;
            let fd = (objective(&up) - objective(&down)) / (2.0 * h);
            assert!(
                (grad.values[b] - fd).abs() < 1e-8,
                "logit {b}: analytic {} vs finite difference {fd}",
                grad.values[b],
            );
        }
    }

    #[test]
    fn kl_gradient_weights_groups_by_rollout_share() {
        // Two groups in different cells with different sizes: each cell's KL
        // gradient must be scaled by that group's share of the batch.
        let params = PolicyParams::new(
            1,
            vec![8, 16],
            vec![0.5, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let cell = |effort_bin: usize, n: usize| GroupRollouts {
            obs: Observation { difficulty_bin: 0, effort_bin },
            buckets: vec![0; n],
            old_log_probs: vec![-1.0; n],
        };
        let adv = |n: usize| grpo::AdvantageGroup {
            advantages: vec![0.0; n],
            degenerate: true,
        };
        let batch = vec![(cell(0, 3), adv(3)), (cell(1, 1), adv(1))];
        let mut grad = grpo::SurrogateGradient {
            values: vec![0.0; 4],
            clipped_fraction: 0.0,
        };
        add_kl_gradient(&mut grad, &params, &batch, 1.0).unwrap();
        // Identical logits in both cells, so the raw KL gradients match and
        // the accumulated values differ exactly by the 3:1 rollout ratio.
        assert!(grad.values[0] != 0.0);
        assert!((grad.values[0] - 3.0 * grad.values[2]).abs() < 1e-12);
        assert!((grad.values[1] - 3.0 * grad.values[3]).abs() < 1e-12);
    }

    #[test]
    fn kl_penalty_zero_is_a_no_op() {
        let params =
            PolicyParams::new(1, vec![8, 16], vec![1.0], vec![2.0, -1.0]).unwrap();
        let group = GroupRollouts {
            obs: Observation { difficulty_bin: 0, effort_bin: 0 },
            buckets: vec![0, 1],
            old_log_probs: vec![-0.5, -0.5],
        };
        let adv = grpo::AdvantageGroup { advantages: vec![0.0, 0.0], degenerate: true };
        let batch = vec![(group, adv)];
        let mut grad = grpo::SurrogateGradient {
            values: vec![0.0; 2],
            clipped_fraction: 0.0,
        };
        add_kl_gradient(&mut grad, &params, &batch, 0.0).unwrap();
        assert_eq!(grad.values, vec![0.0, 0.0], "beta = 0 must not touch the gradient");
    }

    #[test]
    fn kl_penalty_rediffuses_a_collapsed_cell() {
        // A cell that has collapsed onto one bucket emits only degenerate
        // groups, so the advantage term is silent; iterating the KL flow
        // alone must pull the cell back toward the uniform distribution.
        let mut params = PolicyParams::new(
            1,
            vec![8, 16, 32, 64],
            vec![1.0],
            vec![6.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let obs = Observation { difficulty_bin: 0, effort_bin: 0 };
        let group = GroupRollouts {
            obs,
            buckets: vec![0, 0],
            old_log_probs: vec![-0.1, -0.1],
        };
        let adv = grpo::AdvantageGroup { advantages: vec![0.0, 0.0], degenerate: true };
        let batch = vec![(group, adv)];
        for step in 0..400 {
            let mut grad = grpo::SurrogateGradient {
                values: vec![0.0; params.len()],
                clipped_fraction: 0.0,
            };
            add_kl_gradient(&mut grad, &params, &batch, 1.0).unwrap();
            let (next, _) = grpo::apply_update(&params, &grad, 0.5, step, 0.0).unwrap();
            params = next;
        }
        let pi = policy::action_distribution(&params, obs).unwrap();
        for (b, &p) in pi.iter().enumerate() {
            assert!(
                (p - 0.25).abs() < 1e-3,
                "bucket {b} holds mass {p}, expected the uniform 0.25"
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let suite = tiny_suite();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(31);
        cfg.checkpoint_interval = 3;
        let state = train(&cfg, &suite, Some(dir.path())).unwrap();

        let final_path = dir.path().join("checkpoint_final.json");
        let periodic = dir.path().join("checkpoint_000003.json");
        assert!(periodic.exists(), "periodic checkpoint missing");
        let loaded = load_checkpoint(&final_path).unwrap();
        assert_eq!(state_json(&state), state_json(&loaded));

        let mid = load_checkpoint(&periodic).unwrap();
        assert_eq!(mid.step, 3);
        let resumed = train_from_state(mid, &suite, None).unwrap();
        assert_eq!(state_json(&state), state_json(&resumed));
    }

    #[test]
    fn load_rejects_foreign_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let suite = tiny_suite();
        let mut state = TrainerState::initial(tiny_config(1), &suite).unwrap();
        state.format = "something-else".into();
        save_checkpoint(&state, &path).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(TrainerError::CheckpointFormat { .. })
        ));
    }

    #[test]
    fn zero_steps_returns_untouched_initial_state() {
        let suite = tiny_suite();
        let mut cfg = tiny_config(41);
        cfg.steps = 0;
        let state = train(&cfg, &suite, None).unwrap();
        assert_eq!(state.step, 0);
        assert!(state.probes.is_empty());
        assert!(state.updates.is_empty());
        let uniform = PolicyParams::uniform(2, cfg.bucket_lengths, cfg.effort_grid).unwrap();
        assert_eq!(state.params, uniform);
    }

    #[test]
    fn probe_schedule_and_step_zero_record() {
        let suite = tiny_suite();
        let state = train(&tiny_config(51), &suite, None).unwrap();
        let steps: Vec<u64> = {
            let mut s: Vec<u64> = state.probes.iter().map(|p| p.step).collect();
            s.dedup();
            s
        };
        assert_eq!(steps, vec![0, 3, 6]);
        let per_event = 2 /* tiers */ * 2 /* grid */;
        assert_eq!(state.probes.len(), 3 * per_event);
        for p in &state.probes {
            assert!(p.mean_tokens.is_finite() && p.mean_tokens >= 8.0);
            assert!((0.0..=1.0).contains(&p.accuracy));
            assert!(p.mean_reward.is_finite());
            if p.step == 0 {
                assert_eq!(p.grad_norm, 0.0, "no update happened before step 0");
            } else {
                assert!(p.grad_norm > 0.0);
            }
        }
        let tiers: std::collections::BTreeSet<&str> =
            state.probes.iter().map(|p| p.tier.as_str()).collect();
        assert_eq!(tiers.into_iter().collect::<Vec<_>>(), vec!["easy", "hard"]);
        assert_eq!(state.updates.len(), 6);
    }

    #[test]
    fn untrained_policy_probes_identically_across_effort() {
        // The uniform policy cannot react to r, and probe draws are shared
        // across effort values, so step-0 rows per tier must match exactly.
        let suite = tiny_suite();
        let state = train(&tiny_config(55), &suite, None).unwrap();
        for tier in ["easy", "hard"] {
            let rows: Vec<&ProbeRecord> = state
                .probes
                .iter()
                .filter(|p| p.step == 0 && p.tier == tier)
                .collect();
            assert_eq!(rows.len(), 2);
            assert_eq!(rows[0].mean_tokens, rows[1].mean_tokens);
            assert_eq!(rows[0].accuracy, rows[1].accuracy);
        }
    }

    #[test]
    fn effort_draws_are_uniform_over_the_grid() {
        let mut cfg = tiny_config(65);
        cfg.effort_grid = policy::default_effort_grid();
        let n = 90_000u64;
        let mut counts = std::collections::BTreeMap::new();
        for step in 0..n {
            let r = pick_effort(&cfg, step, "task-u");
            *counts.entry((r * 10.0).round() as i64).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 9);
        for (_, c) in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 1.0 / 9.0).abs() < 0.005, "freq = {freq}");
        }
    }

    #[test]
    fn plain_reward_reinforces_lengths_that_solve() {
        // One easy tier, correctness-only reward: longer buckets solve more
        // often, so the expected chosen length must grow.
        let train_suite = generate_suite(
            &[TierSpec::new("easy", 4, 30.0, 80.0, 0.0)],
            Split::Train,
            3,
        )
        .unwrap();
        let val =
            generate_suite(&[TierSpec::new("easy", 2, 30.0, 80.0, 0.0)], Split::Validation, 3)
                .unwrap();
        let suite = train_suite.merge(val).unwrap();

        let mut cfg = tiny_config(61);
        cfg.reward_spec = RewardSpec::new(RewardVariant::Plain);
        cfg.steps = 25;
        cfg.learning_rate = 0.3;
        cfg.batch_queries = 4;
        cfg.rollouts_per_query = 8;
        cfg.bucket_lengths = vec![8, 32, 128, 512];
        let state = train(&cfg, &suite, None).unwrap();

        let initial = TrainerState::initial(cfg.clone(), &suite).unwrap().params;
        for ebin in 0..2 {
            let obs = Observation { difficulty_bin: 0, effort_bin: ebin };
            let before = expected_length(&initial, obs);
            let after = expected_length(&state.params, obs);
            assert!(
                after > before,
                "effort bin {ebin}: expected length {after} did not grow past {before}"
            );
        }
    }

    fn expected_length(params: &PolicyParams, obs: Observation) -> f64 {
        let dist = policy::action_distribution(params, obs).unwrap();
        dist.iter()
            .zip(params.bucket_lengths())
            .map(|(p, &len)| p * len as f64)
            .sum()
    }

    #[test]
    fn truncation_caps_length_and_fails_the_attempt() {
        let params = PolicyParams::uniform(1, vec![8, 4096], vec![1.0]).unwrap();
        let task = Task {
            id: "t".into(),
            tier: "easy".into(),
            tau: 5.0,
            guess_floor: 0.0,
            split: Split::Train,
        };
        let obs = Observation { difficulty_bin: 0, effort_bin: 0 };
        let group =
            sample_rollout_group(&params, obs, &task, 1.0, 64, 100, 0.0, 9, "rollout/0/t")
                .unwrap();
        let mut saw_truncated = false;
        let mut saw_short_correct = false;
        for ro in &group.rollouts {
            assert!(ro.length <= 100);
            if ro.length == 100 {
                assert!(!ro.correct, "truncated rollout must not verify");
                saw_truncated = true;
            }
            if ro.length == 8 && ro.correct {
                saw_short_correct = true;
            }
        }
        assert!(saw_truncated, "uniform policy should hit the long bucket");
        assert!(saw_short_correct, "tau=5 solves 8-token attempts often");
    }

    #[test]
    fn fixed_task_effort_freezes_the_draw() {
        let mut cfg = tiny_config(71);
        cfg.effort_grid = policy::default_effort_grid();
        cfg.fixed_task_effort = true;
        let fixed: Vec<f64> = (0..20).map(|step| pick_effort(&cfg, step, "task-a")).collect();
        assert!(fixed.windows(2).all(|w| w[0] == w[1]));

        cfg.fixed_task_effort = false;
        let drawn: Vec<f64> = (0..20).map(|step| pick_effort(&cfg, step, "task-a")).collect();
        assert!(drawn.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn running_budget_accumulates_correct_lengths() {
        let suite = tiny_suite();
        let mut cfg = tiny_config(81);
        cfg.t_avg_running = true;
        let state = train(&cfg, &suite, None).unwrap();
        assert!(state.running_correct.iter().any(|m| m.count > 0));

        // With data present the running budget, not the group, decides.
        let running = vec![RunningMean { sum: 1000.0, count: 10 }];
        let rollouts = vec![
            RolloutRecord { length: 10, correct: true, log_prob: -1.0, effort: 1.0 },
            RolloutRecord { length: 20, correct: true, log_prob: -1.0, effort: 1.0 },
        ];
        let budget = training_t_avg(&cfg, &running, 0, &rollouts).unwrap();
        assert_eq!(budget, TAvg::Finite(250.0)); // 2.5 * 100

        cfg.t_avg_running = false;
        let budget = training_t_avg(&cfg, &running, 0, &rollouts).unwrap();
        assert_eq!(budget, TAvg::Finite(37.5)); // 2.5 * 15
    }

    #[test]
    fn difficulty_blind_collapses_the_difficulty_axis() {
        let suite = tiny_suite();
        let mut cfg = tiny_config(91);
        cfg.difficulty_blind = true;
        cfg.steps = 2;
        let state = train(&cfg, &suite, None).unwrap();
        assert_eq!(state.params.num_difficulty_bins(), 1);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn config_and_suite_mismatches_are_rejected() {
        let suite = tiny_suite();

        let mut cfg = tiny_config(1);
        cfg.rollouts_per_query = 1;
        assert!(matches!(train(&cfg, &suite, None), Err(TrainerError::Config(_))));

        let mut cfg = tiny_config(1);
        cfg.eval_interval = 0;
        assert!(matches!(train(&cfg, &suite, None), Err(TrainerError::Config(_))));

        let mut cfg = tiny_config(1);
        cfg.batch_queries = 100;
        assert!(matches!(
            train(&cfg, &suite, None),
            Err(TrainerError::InsufficientTasks { .. })
        ));

        let mut cfg = tiny_config(1);
        cfg.probe_tasks_per_tier = 10;
        assert!(matches!(
            train(&cfg, &suite, None),
            Err(TrainerError::InsufficientValidationTasks { .. })
        ));
    }
}
