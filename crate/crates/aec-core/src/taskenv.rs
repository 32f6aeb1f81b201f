//! Synthetic task environment.
//!
//! A task is a stand-in for a reasoning problem: it has a difficulty scale
//! `tau` (the characteristic number of tokens at which success probability
//! reaches 1 − e⁻¹) and a `guess_floor` (success probability of a zero-length
//! attempt). An attempt of length `L` succeeds with probability
//!
//! ```text
//! p(L) = guess_floor + (1 − guess_floor) · (1 − exp(−L / tau))
//! ```
//!
//! which is strictly increasing and saturating in `L`: thinking longer always
//! helps, with diminishing returns. Tasks are grouped into named difficulty
//! tiers (`tau` drawn log-uniformly from a per-tier range) and disjoint
//! splits. The environment is intentionally minimal: the policy commits to a
//! length, the task flips one biased coin.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::derive_rng;

/// Dataset split a task belongs to. Splits are disjoint by task id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Transfer,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Transfer => "transfer",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = TaskEnvError;

    fn from_str(s: &str) -> Result<Self, TaskEnvError> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "transfer" => Ok(Split::Transfer),
            other => Err(TaskEnvError::UnknownSplit(other.to_string())),
        }
    }
}

/// Recipe for one difficulty tier of a generated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSpec {
    /// Tier label, e.g. "easy". Also the policy's difficulty-bin key.
    pub name: String,
    /// Number of tasks to generate for the split.
    pub count: usize,
    /// Lower end of the log-uniform `tau` range, in tokens. Must be > 0.
    pub tau_low: f64,
    /// Upper end of the log-uniform `tau` range. Must be >= `tau_low`.
    pub tau_high: f64,
    /// Success probability of a zero-length attempt, in [0, 1).
    pub guess_floor: f64,
}

impl TierSpec {
    pub fn new(name: &str, count: usize, tau_low: f64, tau_high: f64, guess_floor: f64) -> Self {
        TierSpec { name: name.to_string(), count, tau_low, tau_high, guess_floor }
    }

    fn validate(&self) -> Result<(), TaskEnvError> {
        let ok = self.tau_low > 0.0
            && self.tau_high >= self.tau_low
            && self.tau_high.is_finite()
            && (0.0..1.0).contains(&self.guess_floor)
            && !self.name.is_empty();
        if ok {
            Ok(())
        } else {
            Err(TaskEnvError::InvalidTierSpec(self.name.clone()))
        }
    }
}

/// One synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// Unique id, unique across the whole suite (it embeds the split).
    pub id: String,
    /// Tier label the task was generated under.
    pub tier: String,
    /// Characteristic thinking length, tokens.
    pub tau: f64,
    /// Success probability at zero length.
    pub guess_floor: f64,
    pub split: Split,
}

/// Outcome of one attempt at a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttemptOutcome {
    /// Tokens spent, as committed by the caller.
    pub length: u32,
    pub correct: bool,
}

/// Probability that an attempt of `length` tokens solves `task`.
///
/// Strictly increasing in `length` from `guess_floor` toward 1 (float
/// rounding saturates it at exactly 1.0 hundreds of `tau` past the knee).
pub fn success_probability(length: u32, task: &Task) -> f64 {
    let saturating = 1.0 - (-(length as f64) / task.tau).exp();
    task.guess_floor + (1.0 - task.guess_floor) * saturating
}

/// Samples one attempt: a Bernoulli draw at `success_probability`.
pub fn attempt<R: Rng + ?Sized>(task: &Task, length: u32, rng: &mut R) -> AttemptOutcome {
    let p = success_probability(length, task);
    AttemptOutcome { length, correct: rng.random::<f64>() < p }
}

/// A collection of tasks with a fixed tier ordering.
///
/// Tier order is the order tiers first appear in (generation order), and
/// doubles as the policy's difficulty-bin numbering.
#[derive(Debug, Clone)]
pub struct TaskSuite {
    tiers: Vec<String>,
    tasks: Vec<Task>,
    by_id: HashMap<String, usize>,
}

impl TaskSuite {
    /// Builds a suite from tasks, deriving tier order from first appearance.
    pub fn from_tasks(tasks: Vec<Task>) -> Result<Self, TaskEnvError> {
        let mut tiers: Vec<String> = Vec::new();
        let mut by_id = HashMap::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            if !tiers.iter().any(|t| *t == task.tier) {
                tiers.push(task.tier.clone());
            }
            if by_id.insert(task.id.clone(), i).is_some() {
                return Err(TaskEnvError::DuplicateTaskId(task.id.clone()));
            }
        }
        Ok(TaskSuite { tiers, tasks, by_id })
    }

    /// Tier labels in difficulty-bin order.
    pub fn tiers(&self) -> &[String] {
        &self.tiers
    }

    /// Difficulty-bin index of a tier label.
    pub fn tier_index(&self, tier: &str) -> Option<usize> {
        self.tiers.iter().position(|t| t == tier)
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.by_id.get(id).map(|&i| &self.tasks[i])
    }

    /// Tasks of one split, in generation order.
    pub fn tasks_in(&self, split: Split) -> Vec<&Task> {
        self.tasks.iter().filter(|t| t.split == split).collect()
    }

    /// Tasks of one split and tier, in generation order.
    pub fn tasks_in_tier(&self, split: Split, tier: &str) -> Vec<&Task> {
        self.tasks.iter().filter(|t| t.split == split && t.tier == tier).collect()
    }

    /// Merges two suites; tier order of `self` takes precedence.
    pub fn merge(self, other: TaskSuite) -> Result<Self, TaskEnvError> {
        let mut tasks = self.tasks;
        tasks.extend(other.tasks);
        TaskSuite::from_tasks(tasks)
    }

    /// Writes the suite as newline-delimited JSON, one task per line, with
    /// fields `(id, tier, tau, guess_floor, split)`.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), TaskEnvError> {
        let mut out = Vec::new();
        for task in &self.tasks {
            serde_json::to_writer(&mut out, task).map_err(TaskEnvError::Serialize)?;
            out.push(b'\n');
        }
        std::fs::write(path, out).map_err(|e| TaskEnvError::Io(path.display().to_string(), e))
    }

    /// Reads a suite back from newline-delimited JSON.
    pub fn load_jsonl(path: &Path) -> Result<Self, TaskEnvError> {
        let file = std::fs::File::open(path)
            .map_err(|e| TaskEnvError::Io(path.display().to_string(), e))?;
        let mut tasks = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| TaskEnvError::Io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            tasks.push(serde_json::from_str(&line).map_err(TaskEnvError::Serialize)?);
        }
        TaskSuite::from_tasks(tasks)
    }
}

/// Generates one split deterministically from tier recipes and a seed.
///
/// `tau` is drawn log-uniformly from `[tau_low, tau_high]` per task. The draw
/// for each task depends only on `(seed, split, tier, index)`, not on other
/// tiers or counts, so enlarging one tier leaves the others' tasks unchanged.
pub fn generate_suite(
    tier_specs: &[TierSpec],
    split: Split,
    seed: u64,
) -> Result<TaskSuite, TaskEnvError> {
    if tier_specs.is_empty() {
        return Err(TaskEnvError::EmptyTierSpec);
    }
    let mut tasks = Vec::new();
    for spec in tier_specs {
        spec.validate()?;
        for i in 0..spec.count {
            let label = format!("task/{split}/{}/{i}", spec.name);
            let mut rng = derive_rng(seed, &label);
            let (lo, hi) = (spec.tau_low.ln(), spec.tau_high.ln());
            let tau = (lo + (hi - lo) * rng.random::<f64>()).exp();
            tasks.push(Task {
                id: format!("{split}-{}-{i:04}", spec.name),
                tier: spec.name.clone(),
                tau,
                guess_floor: spec.guess_floor,
                split,
            });
        }
    }
    TaskSuite::from_tasks(tasks)
}

/// The stock three-tier recipe (easy/medium/hard) with `count` tasks each.
pub fn default_tier_specs(count: usize) -> Vec<TierSpec> {
    vec![
        TierSpec::new("easy", count, 30.0, 80.0, 0.0),
        TierSpec::new("medium", count, 150.0, 400.0, 0.0),
        TierSpec::new("hard", count, 600.0, 1600.0, 0.0),
    ]
}

/// Out-of-domain tier used for the transfer split: nonzero guess floor and a
/// `tau` range straddling the easy/medium boundary.
pub fn transfer_tier_spec(count: usize) -> TierSpec {
    TierSpec::new("transfer", count, 100.0, 500.0, 0.2)
}

#[derive(Debug, thiserror::Error)]
pub enum TaskEnvError {
    #[error("tier spec list is empty")]
    EmptyTierSpec,
    #[error("invalid tier spec '{0}': need tau_low > 0, tau_high >= tau_low, guess_floor in [0, 1), nonempty name")]
    InvalidTierSpec(String),
    #[error("duplicate task id '{0}'")]
    DuplicateTaskId(String),
    #[error("unknown split '{0}' (expected train|validation|test|transfer)")]
    UnknownSplit(String),
    #[error("io error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("task record (de)serialization failed: {0}")]
    Serialize(#[source] serde_json::Error),
}
