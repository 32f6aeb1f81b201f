//! Tabular softmax policy over discrete length buckets.
//!
//! The policy observes `(difficulty_bin, effort_bin)` and chooses how many
//! tokens to spend by sampling one of `K` length buckets from a softmax over
//! per-cell logits. There is no function approximation: the parameter tensor
//! is `D x E x K` logits, one independent categorical distribution per cell,
//! which keeps gradients exact and runs analyzable.
//!
//! Buckets are log-spaced because effort control acts multiplicatively on
//! length; the default grid spans 8 to 131072 tokens so that the uniform
//! initial policy is far more verbose than any tier requires (the analog of
//! an untrained model that rambles), leaving room for training to compress.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Grid points used to generate the default bucket lengths. Rounding to
/// whole tokens merges a few points at the short end, so the final grid is
/// slightly smaller (157 buckets). The spacing (~6% between adjacent buckets
/// at the long end) is fine enough that the length cap resolves adjacent
/// effort values, whose budgets differ by as little as 11% (r = 0.9 vs 1.0).
pub const DEFAULT_BUCKET_GRID_POINTS: usize = 160;

/// Smallest / largest default bucket lengths, tokens.
pub const DEFAULT_MIN_LENGTH: u32 = 8;
pub const DEFAULT_MAX_LENGTH: u32 = 131_072;

/// What the policy sees: a difficulty tier index and an effort-grid index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub difficulty_bin: usize,
    pub effort_bin: usize,
}

/// One sampled action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthSample {
    /// Index of the chosen bucket.
    pub bucket: usize,
    /// Token length of the chosen bucket.
    pub length: u32,
    /// Log probability of the chosen bucket under the sampling distribution.
    pub log_prob: f64,
}

/// The full parameter tensor plus the axis definitions needed to use it.
///
/// `logits` is row-major `[difficulty][effort][bucket]`. The bucket lengths
/// and effort grid travel with the parameters so a checkpoint is
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicyParams")]
pub struct PolicyParams {
    d: usize,
    e: usize,
    k: usize,
    bucket_lengths: Vec<u32>,
    effort_grid: Vec<f64>,
    logits: Vec<f64>,
}

/// Unvalidated mirror of [`PolicyParams`] used during deserialization, so a
/// malformed checkpoint is rejected before any state is constructed.
#[derive(Deserialize)]
struct RawPolicyParams {
    d: usize,
    e: usize,
    k: usize,
    bucket_lengths: Vec<u32>,
    effort_grid: Vec<f64>,
    logits: Vec<f64>,
}

impl TryFrom<RawPolicyParams> for PolicyParams {
    type Error = PolicyError;

    fn try_from(raw: RawPolicyParams) -> Result<Self, PolicyError> {
        PolicyParams::new(raw.d, raw.bucket_lengths, raw.effort_grid, raw.logits).and_then(|p| {
            if p.e == raw.e && p.k == raw.k {
                Ok(p)
            } else {
                Err(PolicyError::Invalid(format!(
                    "header dims (e={}, k={}) disagree with axes (e={}, k={})",
                    raw.e, raw.k, p.e, p.k
                )))
            }
        })
    }
}

impl PolicyParams {
    /// Builds validated parameters from explicit logits.
    pub fn new(
        d: usize,
        bucket_lengths: Vec<u32>,
        effort_grid: Vec<f64>,
        logits: Vec<f64>,
    ) -> Result<Self, PolicyError> {
        let (e, k) = (effort_grid.len(), bucket_lengths.len());
        if d == 0 || e == 0 || k == 0 {
            return Err(PolicyError::Invalid("all axes must be nonempty".into()));
        }
        if !bucket_lengths.windows(2).all(|w| w[0] < w[1]) {
            return Err(PolicyError::Invalid("bucket lengths must be strictly increasing".into()));
        }
        if bucket_lengths[0] == 0 {
            return Err(PolicyError::Invalid("bucket lengths must be >= 1".into()));
        }
        if !effort_grid.windows(2).all(|w| w[0] < w[1])
            || effort_grid.iter().any(|r| !(*r > 0.0 && *r <= 1.0))
        {
            return Err(PolicyError::Invalid(
                "effort grid must be strictly increasing within (0, 1]".into(),
            ));
        }
        if logits.len() != d * e * k {
            return Err(PolicyError::Invalid(format!(
                "logits has {} entries, expected d*e*k = {}",
                logits.len(),
                d * e * k
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::Invalid("logits must be finite".into()));
        }
        Ok(PolicyParams { d, e, k, bucket_lengths, effort_grid, logits })
    }

    /// All-zero logits: the uniform, effort-insensitive starting policy.
    pub fn uniform(
        d: usize,
        bucket_lengths: Vec<u32>,
        effort_grid: Vec<f64>,
    ) -> Result<Self, PolicyError> {
        let n = d * bucket_lengths.len() * effort_grid.len();
        PolicyParams::new(d, bucket_lengths, effort_grid, vec![0.0; n])
    }

    pub fn num_difficulty_bins(&self) -> usize {
        self.d
    }

    pub fn num_effort_bins(&self) -> usize {
        self.e
    }

    pub fn num_buckets(&self) -> usize {
        self.k
    }

    pub fn bucket_lengths(&self) -> &[u32] {
        &self.bucket_lengths
    }

    pub fn effort_grid(&self) -> &[f64] {
        &self.effort_grid
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Total number of parameters, `d * e * k`.
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Index of the effort bin whose grid value matches `r`.
    pub fn effort_bin_for(&self, r: f64) -> Option<usize> {
        self.effort_grid.iter().position(|g| (g - r).abs() < 1e-9)
    }

    /// Flat offset of the first logit of the observation's cell.
    pub fn cell_offset(&self, obs: Observation) -> Result<usize, PolicyError> {
        if obs.difficulty_bin >= self.d {
            return Err(PolicyError::BinOutOfRange {
                axis: "difficulty",
                got: obs.difficulty_bin,
                len: self.d,
            });
        }
        if obs.effort_bin >= self.e {
            return Err(PolicyError::BinOutOfRange {
                axis: "effort",
                got: obs.effort_bin,
                len: self.e,
            });
        }
        Ok((obs.difficulty_bin * self.e + obs.effort_bin) * self.k)
    }

    /// Returns a copy with `step` added to the logits (gradient ascent step).
    pub fn stepped(&self, step: &[f64]) -> Result<Self, PolicyError> {
        if step.len() != self.logits.len() {
            return Err(PolicyError::Invalid(format!(
                "step has {} entries, expected {}",
                step.len(),
                self.logits.len()
            )));
        }
        let logits: Vec<f64> = self.logits.iter().zip(step).map(|(a, b)| a + b).collect();
        PolicyParams::new(self.d, self.bucket_lengths.clone(), self.effort_grid.clone(), logits)
    }
}

/// The default log-spaced bucket grid, 8 to 131072 tokens, deduplicated
/// after rounding to whole tokens (157 buckets).
pub fn default_bucket_lengths() -> Vec<u32> {
    let k = DEFAULT_BUCKET_GRID_POINTS as f64 - 1.0;
    let ratio = (DEFAULT_MAX_LENGTH as f64 / DEFAULT_MIN_LENGTH as f64).ln();
    let mut lengths: Vec<u32> = (0..DEFAULT_BUCKET_GRID_POINTS)
        .map(|i| (DEFAULT_MIN_LENGTH as f64 * (ratio * i as f64 / k).exp()).round() as u32)
        .collect();
    lengths.dedup();
    lengths
}

/// The default effort grid: 0.2, 0.3, ..., 1.0.
pub fn default_effort_grid() -> Vec<f64> {
    (2..=10).map(|i| i as f64 / 10.0).collect()
}

/// Softmax action distribution of one cell. Entries are positive and sum
/// to 1 (up to float rounding).
pub fn action_distribution(
    params: &PolicyParams,
    obs: Observation,
) -> Result<Vec<f64>, PolicyError> {
    let off = params.cell_offset(obs)?;
    let cell = &params.logits[off..off + params.k];
    let max = cell.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = cell.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|x| x / sum).collect())
}

/// Floor applied to reported log probabilities, just above `ln` of the
/// smallest positive double. A bucket whose probability underflowed to zero
/// can still be drawn (uniform exploration, or the end-of-scan fallback), and
/// an infinite log probability would poison the ratio arithmetic downstream.
pub const LOG_PROB_FLOOR: f64 = -700.0;

/// Samples a bucket from the cell's distribution.
///
/// The reported `log_prob` is `ln(action_distribution[bucket])`, floored at
/// [`LOG_PROB_FLOOR`].
pub fn sample_length<R: Rng + ?Sized>(
    params: &PolicyParams,
    obs: Observation,
    rng: &mut R,
) -> Result<LengthSample, PolicyError> {
    let probs = action_distribution(params, obs)?;
    let u: f64 = rng.random();
    let mut bucket = probs.len() - 1; // float dust can leave acc slightly < 1
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            bucket = i;
            break;
        }
    }
    Ok(LengthSample {
        bucket,
        length: params.bucket_lengths[bucket],
        log_prob: probs[bucket].ln().max(LOG_PROB_FLOOR),
    })
}

/// Like [`sample_length`], but with probability `exploration_rate` the bucket
/// is drawn uniformly from the grid instead of from the policy.
///
/// The reported `log_prob` is always the policy's own probability of the
/// chosen bucket, never the mixture's, so downstream probability-ratio
/// machinery treats the sample exactly as if the policy had produced it.
/// With `exploration_rate == 0` this consumes the same draws as
/// [`sample_length`] and behaves identically.
pub fn sample_length_explored<R: Rng + ?Sized>(
    params: &PolicyParams,
    obs: Observation,
    exploration_rate: f64,
    rng: &mut R,
) -> Result<LengthSample, PolicyError> {
    if exploration_rate > 0.0 && rng.random::<f64>() < exploration_rate {
        let probs = action_distribution(params, obs)?;
        let bucket = rng.random_range(0..params.k);
        return Ok(LengthSample {
            bucket,
            length: params.bucket_lengths[bucket],
            log_prob: probs[bucket].ln().max(LOG_PROB_FLOOR),
        });
    }
    sample_length(params, obs, rng)
}

/// Gradient of `ln pi(bucket | obs)` with respect to every logit.
///
/// Same shape as the logits tensor; nonzero only inside the observation's
/// cell, where it equals `onehot(bucket) - softmax(cell)`. Its entries sum to
/// zero, so updates never change a cell's normalization.
pub fn grad_log_prob(
    params: &PolicyParams,
    obs: Observation,
    bucket: usize,
) -> Result<Vec<f64>, PolicyError> {
    if bucket >= params.k {
        return Err(PolicyError::BinOutOfRange { axis: "bucket", got: bucket, len: params.k });
    }
    let off = params.cell_offset(obs)?;
    let probs = action_distribution(params, obs)?;
    let mut grad = vec![0.0; params.logits.len()];
    for (i, p) in probs.iter().enumerate() {
        grad[off + i] = if i == bucket { 1.0 - p } else { -p };
    }
    Ok(grad)
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("{axis} bin {got} out of range (axis length {len})")]
    BinOutOfRange { axis: &'static str, got: usize, len: usize },
    #[error("invalid policy parameters: {0}")]
    Invalid(String),
}
