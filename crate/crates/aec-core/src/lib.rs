//! Desk-scale simulator for adaptive effort control (AEC).
//!
//! AEC trains a policy to spend compute in proportion to a per-query effort
//! parameter `r`: a rollout earns reward only if it is correct *and* its
//! length stays under `r` times the (scaled) average length of the correct
//! rollouts in its group. This crate reproduces that training loop end to end
//! on synthetic tasks small enough to run on one core:
//!
//! - [`taskenv`]: synthetic tasks with a saturating success/length curve,
//!   organized into difficulty tiers and train/validation/test/transfer splits.
//! - [`policy`]: a tabular softmax policy over discrete length buckets,
//!   conditioned on (difficulty tier, effort bin).
//! - [`rewards`]: the AEC reward and the baselines it is compared against
//!   (fixed length penalty, hard budget, plain correctness).
//! - [`grpo`]: group-relative advantage normalization and the clipped
//!   surrogate gradient.
//! - [`trainer`]: the deterministic training loop, probe logging, and
//!   checkpointing.
//! - [`evalkit`]: evaluation grids, effort calibration, token-allocation
//!   curves, power-law fits of learning dynamics, conceptual-depth scans,
//!   and difficulty profiles.
//!
//! Everything downstream of a seed is deterministic: each rollout draws from
//! its own counter-derived RNG stream (see [`seeding`]), so runs are
//! reproducible byte for byte and resumable mid-run.

pub mod evalkit;
pub mod grpo;
pub mod policy;
pub mod rewards;
pub mod seeding;
pub mod taskenv;
pub mod trainer;

pub use evalkit::{
    allocation_curve, calibrate, calibration_error, conceptual_depth, difficulty_profile,
    dominance, evaluate_grid, fit_power_law, invert_calibration, AllocationCurve,
    CalibrationTable, DepthResult, DifficultyProfile, Dominance, EvalTable, PowerLawFit,
};
pub use grpo::{group_advantages, surrogate_gradient, AdvantageGroup, UpdateReport};
pub use policy::{Observation, PolicyParams};
pub use rewards::{RewardSpec, RewardVariant, RolloutGroup, RolloutRecord, TAvg};
pub use taskenv::{Split, Task, TaskSuite, TierSpec};
pub use trainer::{train, train_from_state, ProbeRecord, TrainConfig, TrainerState};
