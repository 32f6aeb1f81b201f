//! Analysis of trained policies: evaluation grids, effort calibration,
//! token-allocation curves, power-law fits of learning dynamics,
//! conceptual-depth scans, and difficulty profiles.
//!
//! Everything here is pure over immutable inputs once the Monte Carlo
//! rollouts are drawn, and every sampler derives its own RNG stream from
//! `(seed, label)`, so repeated analyses are byte-identical. Evaluation
//! rollout labels carry no effort value: each effort level replays the same
//! draws, which removes sampling jitter from effort-response curves (the
//! untrained policy evaluates identically across the whole grid).
//!
//! The CSV writers at the bottom pin the column layouts consumed by
//! downstream tooling; treat those headers as a frozen contract.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::policy::{self, Observation, PolicyParams};
use crate::seeding::derive_rng;
use crate::taskenv::{Split, Task, TaskSuite};
use crate::trainer::sample_rollout;

/// Default rollouts per (task, effort) pair in [`evaluate_grid`].
pub const DEFAULT_SAMPLES_PER_TASK: usize = 16;

/// Default conceptual-depth token price for the easiest tier.
pub const DEFAULT_DEPTH_LAMBDA: f64 = 1e-3;

/// Token prices swept by the conceptual-depth report.
pub const DEFAULT_DEPTH_SWEEP: [f64; 3] = [3e-4, 1e-3, 3e-3];

/// One (tier, effort) cell of an evaluation grid, aggregated with equal task
/// weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub tier: String,
    pub r: f64,
    pub mean_tokens: f64,
    pub accuracy: f64,
    /// `1 - accuracy`, the quantity conceptual depth trades against tokens.
    pub error: f64,
    /// Number of tasks aggregated into this row.
    pub tasks: usize,
}

/// Per-task evaluation outcome at one effort value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTaskRecord {
    pub task_id: String,
    pub tier: String,
    pub r: f64,
    pub mean_tokens: f64,
    pub accuracy: f64,
}

/// Full evaluation of a policy over (tier, effort) cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub effort_grid: Vec<f64>,
    pub samples_per_task: usize,
    /// One row per (tier, r), tiers in suite order, r ascending.
    pub rows: Vec<EvalRow>,
    /// One record per (task, r), tasks in suite order within tier.
    pub per_task: Vec<PerTaskRecord>,
}

/// Evaluates `params` on every task of `split` at every effort value.
///
/// Each (task, r) pair gets `samples_per_task` rollouts; rollout `k` of a
/// task replays the stream `(seed, "eval/{split}/{tier}/{task_id}/{k}")` at
/// every r. Tier aggregation weights tasks equally. Tiers with no tasks in
/// the split are skipped.
pub fn evaluate_grid(
    params: &PolicyParams,
    suite: &TaskSuite,
    split: Split,
    effort_grid: &[f64],
    samples_per_task: usize,
    max_length: u32,
    seed: u64,
) -> Result<EvalTable, EvalError> {
    if effort_grid.is_empty() {
        return Err(EvalError::BadParameter("effort grid is empty"));
    }
    if samples_per_task == 0 {
        return Err(EvalError::BadParameter("samples_per_task must be >= 1"));
    }
    if max_length == 0 {
        return Err(EvalError::BadParameter("max_length must be >= 1"));
    }
    if suite.tasks_in(split).is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let mut rows = Vec::new();
    let mut per_task = Vec::new();
    for (tier_idx, tier) in suite.tiers().iter().enumerate() {
        let tasks = suite.tasks_in_tier(split, tier);
        if tasks.is_empty() {
            continue;
        }
        for &r in effort_grid {
            let obs = observation_on(params, suite, tier_idx, r)?;
            let mut tier_tokens = 0.0;
            let mut tier_acc = 0.0;
            for task in &tasks {
                let mut tokens = 0.0;
                let mut correct = 0.0;
                for k in 0..samples_per_task {
                    let label = format!("eval/{split}/{tier}/{}/{k}", task.id);
                    let mut rng = derive_rng(seed, &label);
                    // Evaluation samples the pure policy, no exploration.
                    let s = sample_rollout(params, obs, task, max_length, 0.0, &mut rng)?;
                    tokens += s.length as f64;
                    correct += if s.correct { 1.0 } else { 0.0 };
                }
                let mean_tokens = tokens / samples_per_task as f64;
                let accuracy = correct / samples_per_task as f64;
                tier_tokens += mean_tokens;
                tier_acc += accuracy;
                per_task.push(PerTaskRecord {
                    task_id: task.id.clone(),
                    tier: tier.clone(),
                    r,
                    mean_tokens,
                    accuracy,
                });
            }
            let n = tasks.len() as f64;
            let accuracy = tier_acc / n;
            rows.push(EvalRow {
                tier: tier.clone(),
                r,
                mean_tokens: tier_tokens / n,
                accuracy,
                error: 1.0 - accuracy,
                tasks: tasks.len(),
            });
        }
    }
    Ok(EvalTable {
        effort_grid: effort_grid.to_vec(),
        samples_per_task,
        rows,
        per_task,
    })
}

/// Maps a tier to the policy's difficulty bin: identity when the policy has
/// one bin per tier, bin 0 for difficulty-blind (single-bin) policies.
fn observation_on(
    params: &PolicyParams,
    suite: &TaskSuite,
    tier_idx: usize,
    r: f64,
) -> Result<Observation, EvalError> {
    let difficulty_bin = if params.num_difficulty_bins() == 1 {
        0
    } else if params.num_difficulty_bins() == suite.tiers().len() {
        tier_idx
    } else {
        return Err(EvalError::DimensionMismatch {
            policy_bins: params.num_difficulty_bins(),
            suite_tiers: suite.tiers().len(),
        });
    };
    let effort_bin = params
        .effort_bin_for(r)
        .ok_or(EvalError::EffortNotOnGrid(r))?;
    Ok(Observation { difficulty_bin, effort_bin })
}

/// One effort value's calibration: expected relative tokens `d` and relative
/// accuracy `a` versus the r = 1 reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub r: f64,
    pub d: f64,
    pub a: f64,
}

/// Calibration curve built from one evaluation table (normally the
/// validation split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    /// Points sorted by ascending r; the r = 1 point has d = a = 1 exactly.
    pub points: Vec<CalibrationPoint>,
}

const R_MATCH_EPS: f64 = 1e-9;

fn is_reference(r: f64) -> bool {
    (r - 1.0).abs() < R_MATCH_EPS
}

/// Builds d(r) and a(r) against the r = 1 reference.
///
/// `d(r)` is the mean over tasks of `T(x, r) / T(x, 1)`; `a(r)` is the ratio
/// of equal-task-weight accuracies `Acc(r) / Acc(1)`. Both are exactly 1 at
/// r = 1 by construction.
pub fn calibrate(table: &EvalTable) -> Result<CalibrationTable, EvalError> {
    if !table.effort_grid.iter().any(|&r| is_reference(r)) {
        return Err(EvalError::MissingReference);
    }
    // Reference tokens per task and reference accuracy.
    let mut ref_tokens: Vec<(&str, f64)> = Vec::new();
    let mut ref_acc_sum = 0.0;
    for rec in table.per_task.iter().filter(|rec| is_reference(rec.r)) {
        if !(rec.mean_tokens > 0.0) {
            return Err(EvalError::ZeroReferenceTokens(rec.task_id.clone()));
        }
        ref_tokens.push((&rec.task_id, rec.mean_tokens));
        ref_acc_sum += rec.accuracy;
    }
    if ref_tokens.is_empty() {
        return Err(EvalError::MissingReference);
    }
    let n_tasks = ref_tokens.len() as f64;
    let ref_acc = ref_acc_sum / n_tasks;
    if ref_acc == 0.0 {
        return Err(EvalError::ZeroReferenceAccuracy);
    }
    let tokens_at_one =
        |id: &str| ref_tokens.iter().find(|(t, _)| *t == id).map(|(_, v)| *v);

    let mut points = Vec::with_capacity(table.effort_grid.len());
    for &r in &table.effort_grid {
        let mut ratio_sum = 0.0;
        let mut acc_sum = 0.0;
        let mut count = 0usize;
        for rec in table.per_task.iter().filter(|rec| rec.r == r) {
            let t1 = tokens_at_one(&rec.task_id)
                .ok_or_else(|| EvalError::ZeroReferenceTokens(rec.task_id.clone()))?;
            ratio_sum += rec.mean_tokens / t1;
            acc_sum += rec.accuracy;
            count += 1;
        }
        if count == 0 {
            return Err(EvalError::BadParameter("grid value has no per-task records"));
        }
        let count = count as f64;
        points.push(CalibrationPoint {
            r,
            d: ratio_sum / count,
            a: (acc_sum / count) / ref_acc,
        });
    }
    points.sort_by(|p, q| p.r.total_cmp(&q.r));
    Ok(CalibrationTable { points })
}

/// Result of inverting the calibration map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub r: f64,
    /// The desired value fell outside the table's d range and was clamped to
    /// a grid endpoint.
    pub clamped: bool,
    /// The raw d values were not monotone; the monotone (running-max)
    /// envelope was inverted instead.
    pub non_monotone: bool,
}

/// Finds the effort value whose calibrated token fraction is `desired`.
///
/// Piecewise-linear inversion of the monotone envelope of d(r); exact grid
/// hits return the grid r, ties resolve toward smaller r, out-of-range
/// targets clamp to the nearest endpoint.
pub fn invert_calibration(
    table: &CalibrationTable,
    desired: f64,
) -> Result<Inversion, EvalError> {
    if !(desired > 0.0 && desired <= 1.0) {
        return Err(EvalError::DesiredOutOfRange(desired));
    }
    if table.points.is_empty() {
        return Err(EvalError::BadParameter("calibration table is empty"));
    }
    let mut points = table.points.clone();
    points.sort_by(|p, q| p.r.total_cmp(&q.r));
    let mut envelope = Vec::with_capacity(points.len());
    let mut running = f64::NEG_INFINITY;
    for p in &points {
        running = running.max(p.d);
        envelope.push(running);
    }
    let non_monotone = envelope.iter().zip(&points).any(|(e, p)| *e != p.d);

    if desired <= envelope[0] {
        return Ok(Inversion { r: points[0].r, clamped: desired < envelope[0], non_monotone });
    }
    for i in 1..points.len() {
        if envelope[i] >= desired {
            if envelope[i] == desired {
                return Ok(Inversion { r: points[i].r, clamped: false, non_monotone });
            }
            let (d0, d1) = (envelope[i - 1], envelope[i]);
            let (r0, r1) = (points[i - 1].r, points[i].r);
            let t = (desired - d0) / (d1 - d0);
            return Ok(Inversion { r: r0 + t * (r1 - r0), clamped: false, non_monotone });
        }
    }
    Ok(Inversion { r: points[points.len() - 1].r, clamped: true, non_monotone })
}

/// How well a calibration table transfers to an independent evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationReport {
    /// Mean over (task, r) of |T(x,r)/T(x,1) - d(r)|.
    pub token_mean_abs: f64,
    /// Same mean without the absolute value (bias of the calibration).
    pub token_mean_signed: f64,
    /// Mean over r of |Acc(r)/Acc(1) - a(r)|.
    pub accuracy_mean_abs: f64,
    /// Number of (task, r) pairs behind the token means.
    pub pairs: usize,
}

/// Scores `table` (built on one split) against `test` records from another.
pub fn calibration_error(
    table: &CalibrationTable,
    test: &EvalTable,
) -> Result<CalibrationReport, EvalError> {
    let test_cal = calibrate(test)?; // reuses the ratio plumbing and checks
    let mut abs = 0.0;
    let mut signed = 0.0;
    let mut pairs = 0usize;
    let mut acc_abs = 0.0;
    let mut acc_count = 0usize;
    for point in &table.points {
        let Some(test_at_r) = test_cal
            .points
            .iter()
            .find(|p| (p.r - point.r).abs() < R_MATCH_EPS)
        else {
            return Err(EvalError::GridMismatch(
                "test table does not cover the calibration grid",
            ));
        };
        acc_abs += (test_at_r.a - point.a).abs();
        acc_count += 1;

        // Per-task token ratios on the test split at this r.
        let mut t1 = std::collections::HashMap::new();
        for rec in test.per_task.iter().filter(|rec| is_reference(rec.r)) {
            t1.insert(rec.task_id.as_str(), rec.mean_tokens);
        }
        for rec in test.per_task.iter().filter(|rec| rec.r == point.r) {
            let reference = t1
                .get(rec.task_id.as_str())
                .copied()
                .ok_or_else(|| EvalError::ZeroReferenceTokens(rec.task_id.clone()))?;
            let o = rec.mean_tokens / reference;
            abs += (o - point.d).abs();
            signed += o - point.d;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(EvalError::GridMismatch("no (task, r) pairs to score"));
    }
    Ok(CalibrationReport {
        token_mean_abs: abs / pairs as f64,
        token_mean_signed: signed / pairs as f64,
        accuracy_mean_abs: acc_abs / acc_count as f64,
        pairs,
    })
}

/// One task's standing in an allocation analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationEntry {
    pub task_id: String,
    /// Empirical solve rate at the analyzed effort value.
    pub solve_rate: f64,
    pub mean_tokens: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationPoint {
    /// Fraction of tasks covered, easiest first.
    pub prefix_fraction: f64,
    /// Fraction of all tokens those tasks received.
    pub token_fraction: f64,
}

/// Cumulative token share by task-difficulty prefix. Starts at exactly
/// (0, 0) and ends at exactly (1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationCurve {
    pub points: Vec<AllocationPoint>,
}

impl AllocationCurve {
    /// Linear interpolation of the token share at a task-prefix fraction.
    pub fn share_at(&self, prefix: f64) -> f64 {
        let p = prefix.clamp(0.0, 1.0);
        for w in self.points.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if p <= hi.prefix_fraction {
                if hi.prefix_fraction == lo.prefix_fraction {
                    return hi.token_fraction;
                }
                let t = (p - lo.prefix_fraction) / (hi.prefix_fraction - lo.prefix_fraction);
                return lo.token_fraction + t * (hi.token_fraction - lo.token_fraction);
            }
        }
        1.0
    }

    /// Token share of the easiest half of the tasks.
    pub fn easiest_half_share(&self) -> f64 {
        self.share_at(0.5)
    }
}

/// Builds the cumulative allocation curve: tasks sorted easiest first
/// (descending solve rate, ties by ascending id), then cumulative token
/// share per prefix.
pub fn allocation_curve(entries: &[AllocationEntry]) -> Result<AllocationCurve, EvalError> {
    if entries.len() < 2 {
        return Err(EvalError::TooFewTasks(entries.len()));
    }
    if entries
        .iter()
        .any(|e| !e.solve_rate.is_finite() || !e.mean_tokens.is_finite() || e.mean_tokens < 0.0)
    {
        return Err(EvalError::BadParameter("allocation entries must be finite"));
    }
    let mut sorted: Vec<&AllocationEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        b.solve_rate
            .total_cmp(&a.solve_rate)
            .then_with(|| a.task_id.cmp(&b.task_id))
    });
    let mut cumulative = Vec::with_capacity(sorted.len());
    let mut sum = 0.0;
    for e in &sorted {
        sum += e.mean_tokens;
        cumulative.push(sum);
    }
    let total = sum;
    if !(total > 0.0) {
        return Err(EvalError::BadParameter("total token count is zero"));
    }
    let n = sorted.len() as f64;
    let mut points = vec![AllocationPoint { prefix_fraction: 0.0, token_fraction: 0.0 }];
    points.extend(cumulative.iter().enumerate().map(|(i, c)| AllocationPoint {
        prefix_fraction: (i + 1) as f64 / n,
        token_fraction: c / total,
    }));
    Ok(AllocationCurve { points })
}

/// Extracts allocation entries from an evaluation table at one effort value.
pub fn allocation_entries(table: &EvalTable, r: f64) -> Result<Vec<AllocationEntry>, EvalError> {
    let entries: Vec<AllocationEntry> = table
        .per_task
        .iter()
        .filter(|rec| (rec.r - r).abs() < R_MATCH_EPS)
        .map(|rec| AllocationEntry {
            task_id: rec.task_id.clone(),
            solve_rate: rec.accuracy,
            mean_tokens: rec.mean_tokens,
        })
        .collect();
    if entries.is_empty() {
        return Err(EvalError::EffortNotOnGrid(r));
    }
    Ok(entries)
}

/// Power law `value = coefficient * step^(-beta)` fitted by least squares in
/// log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub coefficient: f64,
    pub beta: f64,
    /// First and last step actually used by the fit.
    pub step_min: u64,
    pub step_max: u64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Fits a decay power law to (step, value) points.
///
/// Points with step 0 (log undefined) or non-positive values are dropped;
/// at least 3 must survive. `beta` is the negated log-log slope, so decaying
/// series give positive beta.
pub fn fit_power_law(points: &[(u64, f64)]) -> Result<PowerLawFit, EvalError> {
    let valid: Vec<(f64, f64)> = points
        .iter()
        .filter(|(step, v)| *step >= 1 && *v > 0.0 && v.is_finite())
        .map(|(step, v)| ((*step as f64).ln(), v.ln()))
        .collect();
    if valid.len() < 3 {
        return Err(EvalError::TooFewPoints(valid.len()));
    }
    let n = valid.len() as f64;
    let mean_x = valid.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = valid.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = valid.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
    if sxx == 0.0 {
        return Err(EvalError::BadParameter("all points share one step; slope undefined"));
    }
    let sxy: f64 = valid.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residual = (valid
        .iter()
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    let steps: Vec<u64> = points
        .iter()
        .filter(|(step, v)| *step >= 1 && *v > 0.0 && v.is_finite())
        .map(|(s, _)| *s)
        .collect();
    Ok(PowerLawFit {
        coefficient: intercept.exp(),
        beta: -slope,
        step_min: *steps.iter().min().expect("nonempty"),
        step_max: *steps.iter().max().expect("nonempty"),
        residual,
    })
}

/// One grid point of a conceptual-depth scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPoint {
    pub r: f64,
    pub tokens: f64,
    pub error: f64,
    /// `error + lambda_d * tokens`.
    pub kappa: f64,
}

/// Conceptual-depth scan of one tier: where error-plus-token-cost bottoms
/// out over the effort grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthResult {
    pub tier: String,
    pub lambda_d: f64,
    /// Points sorted by ascending r.
    pub points: Vec<DepthPoint>,
    /// Index into `points` of the kappa minimum (ties toward smaller T).
    pub opt_index: usize,
    pub t_star: f64,
    pub r_star: f64,
    /// Finite-difference dE/dT at the optimum: central where interior,
    /// one-sided at the grid edge, None when undefined (single point or flat
    /// token axis).
    pub slope_at_optimum: Option<f64>,
}

/// Scans `kappa = error + lambda_d * tokens` over one tier's evaluation rows.
pub fn conceptual_depth(rows: &[EvalRow], lambda_d: f64) -> Result<DepthResult, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::BadParameter("depth scan needs at least one row"));
    }
    if !(lambda_d >= 0.0) || !lambda_d.is_finite() {
        return Err(EvalError::BadParameter("lambda_d must be finite and >= 0"));
    }
    let tier = rows[0].tier.clone();
    if rows.iter().any(|row| row.tier != tier) {
        return Err(EvalError::MixedTiers);
    }
    let mut points: Vec<DepthPoint> = rows
        .iter()
        .map(|row| DepthPoint {
            r: row.r,
            tokens: row.mean_tokens,
            error: row.error,
            kappa: row.error + lambda_d * row.mean_tokens,
        })
        .collect();
    points.sort_by(|p, q| p.r.total_cmp(&q.r));

    let mut opt_index = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let best = &points[opt_index];
        if p.kappa < best.kappa || (p.kappa == best.kappa && p.tokens < best.tokens) {
            opt_index = i;
        }
    }
    let slope_at_optimum = slope_at(&points, opt_index);
    Ok(DepthResult {
        tier,
        lambda_d,
        t_star: points[opt_index].tokens,
        r_star: points[opt_index].r,
        opt_index,
        points,
        slope_at_optimum,
    })
}

/// dE/dT at grid index `i`: central difference where both neighbors exist,
/// one-sided at the edges.
fn slope_at(points: &[DepthPoint], i: usize) -> Option<f64> {
    let (lo, hi) = match (i.checked_sub(1), i + 1 < points.len()) {
        (Some(prev), true) => (prev, i + 1),
        (Some(prev), false) => (prev, i),
        (None, true) => (i, i + 1),
        (None, false) => return None,
    };
    let dt = points[hi].tokens - points[lo].tokens;
    if dt == 0.0 {
        return None;
    }
    Some((points[hi].error - points[lo].error) / dt)
}

/// The token price a tier's conceptual-depth scan uses, mirroring the
/// exam-time ratios of the stock tiers: easy pays full price, medium a
/// third, hard a twelfth. Unknown tier names pay full price.
pub fn lambda_for_tier(base: f64, tier: &str) -> f64 {
    match tier {
        "medium" => base / 3.0,
        "hard" => base / 12.0,
        _ => base,
    }
}

/// One budget point of a difficulty profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub budget: u32,
    /// Probability a rollout is correct and fits the budget.
    pub p_correct: f64,
    /// Expected attempts needed: `1 / p_correct`, infinite at zero.
    pub d: f64,
}

/// Monte Carlo difficulty profile of one task under a length sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyProfile {
    pub task_id: String,
    /// Points at the caller's budget grid, ascending; `p_correct` is
    /// non-decreasing by construction (one sample set, cumulative budgets).
    pub points: Vec<ProfilePoint>,
}

/// Where profile rollout lengths come from.
#[derive(Debug, Clone, Copy)]
pub enum LengthSampler<'a> {
    /// A policy cell: the profile of what a trained model actually does.
    Policy { params: &'a PolicyParams, obs: Observation },
    /// Uniform over a fixed length menu: a policy-free probe of the
    /// environment itself.
    FixedUniform { lengths: &'a [u32] },
}

/// Estimates `p_correct(budget | task)` by Monte Carlo and derives the
/// expected-attempts curve `d = 1 / p_correct`.
///
/// Sample `k` draws from the stream `(seed, "profile/{k}")`: the label
/// deliberately omits the task id, so profiles of different tasks under one
/// seed share their random draws. Each profile stays an unbiased estimate,
/// and cross-task comparisons (dominance) are coupled instead of jittered:
/// with a shared sampler, a genuinely harder task is measured harder at
/// every budget.
pub fn difficulty_profile(
    task: &Task,
    sampler: LengthSampler<'_>,
    budgets: &[u32],
    samples: usize,
    seed: u64,
) -> Result<DifficultyProfile, EvalError> {
    if samples < 100 {
        return Err(EvalError::TooFewSamples(samples));
    }
    if budgets.is_empty() || !budgets.windows(2).all(|w| w[0] < w[1]) {
        return Err(EvalError::BadParameter("budget grid must be strictly increasing"));
    }
    if let LengthSampler::FixedUniform { lengths } = sampler {
        if lengths.is_empty() {
            return Err(EvalError::BadParameter("fixed sampler needs at least one length"));
        }
    }
    let mut draws = Vec::with_capacity(samples);
    for k in 0..samples {
        let mut rng = derive_rng(seed, &format!("profile/{k}"));
        let length = match sampler {
            LengthSampler::Policy { params, obs } => {
                policy::sample_length(params, obs, &mut rng)?.length
            }
            LengthSampler::FixedUniform { lengths } => {
                use rand::Rng;
                lengths[rng.random_range(0..lengths.len())]
            }
        };
        let outcome = crate::taskenv::attempt(task, length, &mut rng);
        draws.push((length, outcome.correct));
    }
    let points = budgets
        .iter()
        .map(|&budget| {
            let hits = draws
                .iter()
                .filter(|(len, correct)| *correct && *len <= budget)
                .count();
            let p_correct = hits as f64 / samples as f64;
            let d = if p_correct == 0.0 { f64::INFINITY } else { 1.0 / p_correct };
            ProfilePoint { budget, p_correct, d }
        })
        .collect();
    Ok(DifficultyProfile { task_id: task.id.clone(), points })
}

/// Outcome of comparing two difficulty profiles pointwise on `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    /// A needs at least as many attempts everywhere, strictly more somewhere.
    ADominates,
    /// B needs at least as many attempts everywhere, strictly more somewhere.
    BDominates,
    /// The curves cross, or are identical.
    Incomparable,
}

/// Pointwise comparison of two profiles over one budget grid.
pub fn dominance(a: &DifficultyProfile, b: &DifficultyProfile) -> Result<Dominance, EvalError> {
    if a.points.len() != b.points.len()
        || a.points
            .iter()
            .zip(&b.points)
            .any(|(p, q)| p.budget != q.budget)
    {
        return Err(EvalError::GridMismatch("profiles use different budget grids"));
    }
    let mut a_ge_all = true;
    let mut a_gt_any = false;
    let mut b_ge_all = true;
    let mut b_gt_any = false;
    for (p, q) in a.points.iter().zip(&b.points) {
        if p.d < q.d {
            a_ge_all = false;
            b_gt_any = true;
        }
        if p.d > q.d {
            b_ge_all = false;
            a_gt_any = true;
        }
    }
    Ok(if a_ge_all && a_gt_any {
        Dominance::ADominates
    } else if b_ge_all && b_gt_any {
        Dominance::BDominates
    } else {
        Dominance::Incomparable
    })
}

/// Writes `text` to `path` atomically (temp file in place, then rename).
pub fn write_text_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    std::fs::write(tmp, text)?;
    std::fs::rename(tmp, path)
}

/// Writes the evaluation grid as `tier,r,mean_tokens,accuracy`.
pub fn write_eval_csv(table: &EvalTable, path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("tier,r,mean_tokens,accuracy\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.tier, row.r, row.mean_tokens, row.accuracy
        ));
    }
    write_text_atomic(path, &out)?;
    Ok(())
}

/// Writes the calibration curve as `r,d,a`.
pub fn write_calibration_csv(table: &CalibrationTable, path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("r,d,a\n");
    for p in &table.points {
        out.push_str(&format!("{},{},{}\n", p.r, p.d, p.a));
    }
    write_text_atomic(path, &out)?;
    Ok(())
}

/// Writes the allocation curve as `prefix_fraction,token_fraction`.
pub fn write_allocation_csv(curve: &AllocationCurve, path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("prefix_fraction,token_fraction\n");
    for p in &curve.points {
        out.push_str(&format!("{},{}\n", p.prefix_fraction, p.token_fraction));
    }
    write_text_atomic(path, &out)?;
    Ok(())
}

/// Writes depth scans as `tier,r,T,E,kappa,is_optimum`.
pub fn write_depth_csv(results: &[DepthResult], path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("tier,r,T,E,kappa,is_optimum\n");
    for result in results {
        for (i, p) in result.points.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                result.tier,
                p.r,
                p.tokens,
                p.error,
                p.kappa,
                i == result.opt_index
            ));
        }
    }
    write_text_atomic(path, &out)?;
    Ok(())
}

/// Writes difficulty profiles as `task_id,budget,p_correct,d`. Infinite d
/// (nothing correct within budget) prints as `inf`.
pub fn write_profiles_csv(profiles: &[DifficultyProfile], path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("task_id,budget,p_correct,d\n");
    for profile in profiles {
        for p in &profile.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                profile.task_id, p.budget, p.p_correct, p.d
            ));
        }
    }
    write_text_atomic(path, &out)?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no tasks in the {0} split")]
    EmptySplit(Split),
    #[error("policy has {policy_bins} difficulty bins; suite has {suite_tiers} tiers (need equal, or 1 for a blind policy)")]
    DimensionMismatch { policy_bins: usize, suite_tiers: usize },
    #[error("effort value {0} is not on the policy's grid")]
    EffortNotOnGrid(f64),
    #[error("evaluation grid lacks the r = 1 reference")]
    MissingReference,
    #[error("task '{0}' has no positive reference token count at r = 1")]
    ZeroReferenceTokens(String),
    #[error("reference accuracy at r = 1 is zero; accuracy calibration undefined")]
    ZeroReferenceAccuracy,
    #[error("desired token fraction {0} outside (0, 1]")]
    DesiredOutOfRange(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),
    #[error("allocation needs at least 2 tasks, got {0}")]
    TooFewTasks(usize),
    #[error("power-law fit needs at least 3 usable points, got {0}")]
    TooFewPoints(usize),
    #[error("difficulty profiles need at least 100 samples, got {0}")]
    TooFewSamples(usize),
    #[error("rows mix multiple tiers")]
    MixedTiers,
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error("output write failed: {0}")]
    Io(#[from] std::io::Error),
}
