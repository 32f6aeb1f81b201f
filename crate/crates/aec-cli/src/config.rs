//! Run configuration: the TOML file format, its validation, and the
//! content-addressed run id.
//!
//! Top-level keys are exactly the trainer configuration's field names plus
//! `tier_spec`; unknown keys are rejected with the offending name. Only the
//! keys without a sensible stock value are required (`steps`, `seed`,
//! `reward_spec`, `tier_spec`); everything else defaults to the trainer's
//! stock configuration, and the run directory always receives a fully
//! explicit snapshot of the effective config.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use aec_core::policy;
use aec_core::rewards::{BudgetMode, RewardSpec, RewardVariant, DEFAULT_ALPHA};
use aec_core::taskenv::{generate_suite, Split, TaskSuite, TierSpec};
use aec_core::trainer::TrainConfig;

use crate::errors::CliError;

/// Minimum validation tasks per trained tier; probes and calibration both
/// key off this split, so trainable tiers must provision it.
pub const MIN_VALIDATION_TASKS: usize = 15;

/// Stock seed of the default experiment configs.
pub const DEFAULT_SEED: u64 = 17;

/// Length-penalty weight at the scale where the penalty barely registers
/// against the correctness reward at this simulator's token scale. Tuned
/// once against the stock tiers; the brittleness comparison freezes it here.
pub const PENALTY_LAMBDA_SMALL: f64 = 1e-4;

/// Length-penalty weight at the scale where the penalty visibly modulates
/// token usage. Tuned once against the stock tiers and frozen.
pub const PENALTY_LAMBDA_LARGE: f64 = 1e-3;

/// One difficulty tier of the experiment: the task-generation recipe plus
/// how many tasks each split receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierConfig {
    pub name: String,
    /// Lower end of the log-uniform solve-scale range, in tokens.
    pub tau_low: f64,
    pub tau_high: f64,
    #[serde(default)]
    pub guess_floor: f64,
    #[serde(default)]
    pub train: usize,
    #[serde(default)]
    pub validation: usize,
    #[serde(default)]
    pub test: usize,
    #[serde(default)]
    pub transfer: usize,
}

impl TierConfig {
    fn count_for(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
            Split::Transfer => self.transfer,
        }
    }

    fn spec(&self, count: usize) -> TierSpec {
        TierSpec::new(&self.name, count, self.tau_low, self.tau_high, self.guess_floor)
    }
}

/// Reward section of the config file: a `variant` tag plus that variant's
/// parameters. Parameters belonging to another variant are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// One of `aec`, `length_penalty`, `hard_budget`, `plain`.
    pub variant: String,
    /// Budget scale of the `aec` variant (default 2.5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Penalty weight of the `length_penalty` variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Penalty divisor of the `length_penalty` variant (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<u32>,
    /// Token budget of the `hard_budget` variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<u32>,
    /// `max` or `exact` (default `max`), for the `hard_budget` variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Exact-mode deviation slope (default `1 / t_max`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Token price of the net-reward report `J = R - cost_lambda * T`.
    #[serde(default)]
    pub cost_lambda: f64,
    /// Ablation: fold `cost_lambda * length` into the `plain` training
    /// reward.
    #[serde(default)]
    pub net_reward_training: bool,
}

impl RewardConfig {
    pub fn aec() -> Self {
        RewardConfig {
            variant: "aec".into(),
            alpha: Some(DEFAULT_ALPHA),
            lambda: None,
            points: None,
            t_max: None,
            mode: None,
            delta: None,
            cost_lambda: 0.0,
            net_reward_training: false,
        }
    }

    pub fn length_penalty(lambda: f64, points: u32) -> Self {
        RewardConfig {
            variant: "length_penalty".into(),
            alpha: None,
            lambda: Some(lambda),
            points: Some(points),
            t_max: None,
            mode: None,
            delta: None,
            cost_lambda: 0.0,
            net_reward_training: false,
        }
    }

    pub fn plain() -> Self {
        RewardConfig {
            variant: "plain".into(),
            alpha: None,
            lambda: None,
            points: None,
            t_max: None,
            mode: None,
            delta: None,
            cost_lambda: 0.0,
            net_reward_training: false,
        }
    }

    fn reject_foreign(&self, allowed: &[&str]) -> Result<(), CliError> {
        let present: [(&str, bool); 6] = [
            ("alpha", self.alpha.is_some()),
            ("lambda", self.lambda.is_some()),
            ("points", self.points.is_some()),
            ("t_max", self.t_max.is_some()),
            ("mode", self.mode.is_some()),
            ("delta", self.delta.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(CliError::Usage(format!(
                    "reward_spec.{key} does not apply to variant \"{}\"",
                    self.variant
                )));
            }
        }
        Ok(())
    }

    pub fn to_spec(&self) -> Result<RewardSpec, CliError> {
        let variant = match self.variant.as_str() {
            "aec" => {
                self.reject_foreign(&["alpha"])?;
                RewardVariant::Aec { alpha: self.alpha.unwrap_or(DEFAULT_ALPHA) }
            }
            "length_penalty" => {
                self.reject_foreign(&["lambda", "points"])?;
                let lambda = self.lambda.ok_or_else(|| {
                    CliError::Usage(
                        "reward_spec.lambda is required when variant = \"length_penalty\"".into(),
                    )
                })?;
                RewardVariant::LengthPenalty { lambda, points: self.points.unwrap_or(1) }
            }
            "hard_budget" => {
                self.reject_foreign(&["t_max", "mode", "delta"])?;
                let t_max = self.t_max.ok_or_else(|| {
                    CliError::Usage(
                        "reward_spec.t_max is required when variant = \"hard_budget\"".into(),
                    )
                })?;
                let mode = match self.mode.as_deref().unwrap_or("max") {
                    "max" => BudgetMode::Max,
                    "exact" => BudgetMode::Exact,
                    other => {
                        return Err(CliError::Usage(format!(
                            "reward_spec.mode \"{other}\" unknown (expected max or exact)"
                        )))
                    }
                };
                let delta = self
                    .delta
                    .unwrap_or(if t_max > 0 { 1.0 / t_max as f64 } else { 0.0 });
                RewardVariant::HardBudget { t_max, mode, delta }
            }
            "plain" => {
                self.reject_foreign(&[])?;
                RewardVariant::Plain
            }
            other => {
                return Err(CliError::Usage(format!(
                    "reward_spec.variant \"{other}\" unknown (expected aec, length_penalty, \
                     hard_budget, or plain)"
                )))
            }
        };
        let spec = RewardSpec {
            variant,
            cost_lambda: self.cost_lambda,
            net_reward_training: self.net_reward_training,
        };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }
}

fn d_batch_queries() -> usize {
    20
}
fn d_rollouts() -> usize {
    16
}
fn d_learning_rate() -> f64 {
    10.0
}
fn d_clip_ratio() -> f64 {
    0.2
}
fn d_exploration_rate() -> f64 {
    aec_core::trainer::DEFAULT_EXPLORATION_RATE
}
fn d_kl_beta() -> f64 {
    aec_core::trainer::DEFAULT_KL_BETA
}
fn d_advantage_epsilon() -> f64 {
    aec_core::grpo::DEFAULT_ADVANTAGE_EPSILON
}
fn d_max_length() -> u32 {
    policy::DEFAULT_MAX_LENGTH
}
fn d_eval_interval() -> u64 {
    25
}
fn d_checkpoint_interval() -> u64 {
    250
}
fn d_probe_tasks() -> usize {
    8
}
fn d_probe_rollouts() -> usize {
    16
}

/// The full run configuration as read from (and written back to) TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub steps: u64,
    #[serde(default = "d_batch_queries")]
    pub batch_queries: usize,
    #[serde(default = "d_rollouts")]
    pub rollouts_per_query: usize,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d_clip_ratio")]
    pub clip_ratio: f64,
    #[serde(default = "d_exploration_rate")]
    pub exploration_rate: f64,
    #[serde(default = "d_kl_beta")]
    pub kl_beta: f64,
    #[serde(default = "d_advantage_epsilon")]
    pub advantage_epsilon: f64,
    #[serde(default = "d_max_length")]
    pub max_length: u32,
    #[serde(default = "d_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "d_checkpoint_interval")]
    pub checkpoint_interval: u64,
    #[serde(default = "d_probe_tasks")]
    pub probe_tasks_per_tier: usize,
    #[serde(default = "d_probe_rollouts")]
    pub probe_rollouts_per_task: usize,
    #[serde(default = "policy::default_bucket_lengths")]
    pub bucket_lengths: Vec<u32>,
    #[serde(default = "policy::default_effort_grid")]
    pub effort_grid: Vec<f64>,
    pub reward_spec: RewardConfig,
    pub seed: u64,
    #[serde(default)]
    pub t_avg_running: bool,
    #[serde(default)]
    pub fixed_task_effort: bool,
    #[serde(default)]
    pub difficulty_blind: bool,
    pub tier_spec: Vec<TierConfig>,
}

impl FileConfig {
    /// The stock experiment: AEC reward over the three standard tiers plus
    /// an out-of-domain transfer tier.
    pub fn default_aec(seed: u64) -> Self {
        FileConfig {
            steps: 1000,
            batch_queries: d_batch_queries(),
            rollouts_per_query: d_rollouts(),
            learning_rate: d_learning_rate(),
            clip_ratio: d_clip_ratio(),
            exploration_rate: d_exploration_rate(),
            kl_beta: d_kl_beta(),
            advantage_epsilon: d_advantage_epsilon(),
            max_length: d_max_length(),
            eval_interval: d_eval_interval(),
            checkpoint_interval: d_checkpoint_interval(),
            probe_tasks_per_tier: d_probe_tasks(),
            probe_rollouts_per_task: d_probe_rollouts(),
            bucket_lengths: policy::default_bucket_lengths(),
            effort_grid: policy::default_effort_grid(),
            reward_spec: RewardConfig::aec(),
            seed,
            t_avg_running: false,
            fixed_task_effort: false,
            difficulty_blind: false,
            tier_spec: default_tiers(),
        }
    }

    /// The stock experiment with the reward swapped for a length penalty.
    pub fn default_length_penalty(lambda: f64, points: u32, seed: u64) -> Self {
        let mut config = FileConfig::default_aec(seed);
        config.reward_spec = RewardConfig::length_penalty(lambda, points);
        config
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: FileConfig = toml::from_str(text)
            .map_err(|e| CliError::Usage(format!("config file invalid: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.tier_spec.is_empty() {
            return Err(CliError::Usage("tier_spec must list at least one tier".into()));
        }
        for (i, tier) in self.tier_spec.iter().enumerate() {
            if self.tier_spec[..i].iter().any(|t| t.name == tier.name) {
                return Err(CliError::Usage(format!(
                    "tier_spec names a tier twice: \"{}\"",
                    tier.name
                )));
            }
            if tier.train > 0 && tier.validation < MIN_VALIDATION_TASKS {
                return Err(CliError::Usage(format!(
                    "tier \"{}\" trains but has {} validation tasks; trained tiers need at \
                     least {MIN_VALIDATION_TASKS} for probes and calibration",
                    tier.name, tier.validation
                )));
            }
            if tier.train > 0 && tier.validation < self.probe_tasks_per_tier {
                return Err(CliError::Usage(format!(
                    "tier \"{}\": probe_tasks_per_tier is {} but only {} validation tasks \
                     are configured",
                    tier.name, self.probe_tasks_per_tier, tier.validation
                )));
            }
        }
        let train_total: usize = self.tier_spec.iter().map(|t| t.train).sum();
        if self.steps > 0 && train_total < self.batch_queries {
            return Err(CliError::Usage(format!(
                "batch_queries is {} but tier_spec provides only {train_total} train tasks",
                self.batch_queries
            )));
        }
        // Delegate the numeric checks to the trainer config.
        self.to_train_config()?.validate().map_err(CliError::from)?;
        Ok(())
    }

    pub fn to_train_config(&self) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            steps: self.steps,
            batch_queries: self.batch_queries,
            rollouts_per_query: self.rollouts_per_query,
            learning_rate: self.learning_rate,
            clip_ratio: self.clip_ratio,
            exploration_rate: self.exploration_rate,
            kl_beta: self.kl_beta,
            advantage_epsilon: self.advantage_epsilon,
            max_length: self.max_length,
            eval_interval: self.eval_interval,
            checkpoint_interval: self.checkpoint_interval,
            probe_tasks_per_tier: self.probe_tasks_per_tier,
            probe_rollouts_per_task: self.probe_rollouts_per_task,
            bucket_lengths: self.bucket_lengths.clone(),
            effort_grid: self.effort_grid.clone(),
            reward_spec: self.reward_spec.to_spec()?,
            seed: self.seed,
            t_avg_running: self.t_avg_running,
            fixed_task_effort: self.fixed_task_effort,
            difficulty_blind: self.difficulty_blind,
        })
    }

    /// Generates the full task suite: tiers in config order, each tier's
    /// splits generated independently from the run seed.
    pub fn build_suite(&self) -> Result<TaskSuite, CliError> {
        let mut tasks = Vec::new();
        for tier in &self.tier_spec {
            for split in [Split::Train, Split::Validation, Split::Test, Split::Transfer] {
                let count = tier.count_for(split);
                if count == 0 {
                    continue;
                }
                let part = generate_suite(&[tier.spec(count)], split, self.seed)?;
                tasks.extend(part.tasks().iter().cloned());
            }
        }
        TaskSuite::from_tasks(tasks).map_err(CliError::from)
    }

    /// Canonical serialization: every key explicit, deterministic order.
    /// The run id and config hash are computed over these bytes.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn sha256_hex(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Content-addressed run id: identical configs map to identical run
    /// directories, so reruns are idempotent.
    pub fn run_id(&self) -> String {
        format!("run-{}", &self.sha256_hex()[..12])
    }
}

/// The stock tier table: three in-domain tiers spanning roughly a 30x
/// solve-scale spread, plus an out-of-domain transfer tier with a nonzero
/// guess floor.
pub fn default_tiers() -> Vec<TierConfig> {
    let stock = |name: &str, tau_low: f64, tau_high: f64| TierConfig {
        name: name.into(),
        tau_low,
        tau_high,
        guess_floor: 0.0,
        train: 100,
        validation: 15,
        test: 25,
        transfer: 0,
    };
    vec![
        stock("easy", 30.0, 80.0),
        stock("medium", 150.0, 400.0),
        stock("hard", 600.0, 1600.0),
        TierConfig {
            name: "transfer".into(),
            tau_low: 100.0,
            tau_high: 500.0,
            guess_floor: 0.2,
            train: 0,
            validation: 0,
            test: 0,
            transfer: 25,
        },
    ]
}
