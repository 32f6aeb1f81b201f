//! The six subcommands: train, eval, calibrate, depth, difficulty, report.
//!
//! Every command is idempotent for identical inputs: outputs are written
//! atomically (temp file, then rename) into a content-addressed run
//! directory, and nothing except the manifest's timestamps depends on the
//! wall clock. Commands that consume another command's artifacts fail with
//! exit code 2 naming the missing file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aec_core::evalkit::{
    allocation_curve, allocation_entries, calibrate, calibration_error, conceptual_depth,
    difficulty_profile, evaluate_grid, fit_power_law, invert_calibration, lambda_for_tier,
    write_allocation_csv, write_calibration_csv, write_depth_csv, write_eval_csv,
    write_profiles_csv, write_text_atomic, CalibrationReport, CalibrationTable, DepthResult,
    EvalRow, EvalTable, LengthSampler, DEFAULT_DEPTH_SWEEP,
};
use aec_core::policy::Observation;
use aec_core::taskenv::{Split, TaskSuite};
use aec_core::trainer::{load_checkpoint, train, ProbeRecord, TrainerState};
use serde::{Deserialize, Serialize};

use crate::config::FileConfig;
use crate::errors::CliError;
use crate::manifest::{RunManifest, RunPaths, RunStatus};

/// Environment variable overriding the default output root (`runs`).
pub const OUT_ROOT_ENV: &str = "AEC_OUT";

/// Probe steps below this are excluded from learning-dynamics fits; the
/// earliest steps are dominated by the untrained plateau.
pub const MIN_FIT_STEP: u64 = 50;

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Trains a policy per the config file into `<out>/<run_id>/`.
pub fn cmd_train(
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut config = FileConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
        config.validate()?; // revalidate the effective config
    }
    let train_config = config.to_train_config()?;
    let suite = config.build_suite()?;

    let paths = RunPaths::new(out_root(out).join(config.run_id()));
    std::fs::create_dir_all(paths.checkpoints())?;
    std::fs::create_dir_all(paths.analysis())?;
    // A rerun of the same config replaces the checkpoint set wholesale so no
    // stale step files from an earlier, longer run survive.
    for entry in std::fs::read_dir(paths.checkpoints())? {
        let entry = entry?;
        if entry.file_name().to_string_lossy().starts_with("checkpoint_") {
            std::fs::remove_file(entry.path())?;
        }
    }

    let mut manifest = RunManifest::new(config.clone());
    manifest.save(&paths.manifest())?;
    write_text_atomic(&paths.config(), &config.canonical_toml())?;
    suite.save_jsonl(&paths.suite())?;

    println!(
        "training {}: {} steps, {} queries x {} rollouts per step, reward {}",
        manifest.run_id,
        config.steps,
        config.batch_queries,
        config.rollouts_per_query,
        config.reward_spec.variant
    );
    let state = train(&train_config, &suite, Some(&paths.checkpoints()))?;
    write_metrics(&state.probes, &paths.metrics())?;

    manifest.status = RunStatus::Complete;
    manifest.finished_unix = Some(unix_now());
    manifest.save(&paths.manifest())?;

    println!("run directory: {}", paths.root.display());
    println!("  metrics: {} probe records", state.probes.len());
    println!("  final checkpoint: {}", paths.final_checkpoint().display());
    if let Some(last) = state.probes.last() {
        let final_rows: Vec<&ProbeRecord> =
            state.probes.iter().filter(|p| p.step == last.step).collect();
        println!("  validation probes at step {}:", last.step);
        for row in final_rows.iter().filter(|p| (p.r - 1.0).abs() < 1e-9) {
            println!(
                "    {:8} r=1.00: {:8.1} tokens, accuracy {:.3}",
                row.tier, row.mean_tokens, row.accuracy
            );
        }
    }
    Ok(())
}

/// Prints multi-line output, tolerating a reader that hangs up early
/// (`aec report | head` must not abort on the broken pipe).
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn write_metrics(probes: &[ProbeRecord], path: &Path) -> Result<(), CliError> {
    let mut text = String::new();
    for probe in probes {
        text.push_str(&serde_json::to_string(probe)?);
        text.push('\n');
    }
    write_text_atomic(path, &text)?;
    Ok(())
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub split: Split,
    pub r_grid: Option<Vec<f64>>,
    pub samples: usize,
    pub suite: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Evaluates a checkpoint over the effort grid; writes `eval.csv` plus a
/// machine-readable `eval_<split>.json` and prints tier-by-effort tables.
pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let state = load_checkpoint_arg(&args.checkpoint)?;
    let run = RunPaths::from_checkpoint(&args.checkpoint)
        .unwrap_or_else(|| RunPaths::new("."));
    let suite_path = args.suite.unwrap_or_else(|| run.suite());
    if !suite_path.exists() {
        return Err(CliError::missing_artifact(
            &suite_path,
            "expected next to the checkpoint's run directory; pass --suite to point elsewhere",
        ));
    }
    let suite = TaskSuite::load_jsonl(&suite_path)?;
    let grid = args
        .r_grid
        .unwrap_or_else(|| state.params.effort_grid().to_vec());
    let table = evaluate_grid(
        &state.params,
        &suite,
        args.split,
        &grid,
        args.samples,
        state.config.max_length,
        state.config.seed,
    )?;

    let analysis = args.out.unwrap_or_else(|| run.analysis());
    std::fs::create_dir_all(&analysis)?;
    let csv_path = analysis.join("eval.csv");
    write_eval_csv(&table, &csv_path)?;
    let json_path = analysis.join(format!("eval_{}.json", args.split));
    write_json(&json_path, &table)?;

    let tasks: usize = {
        let mut seen = std::collections::HashSet::new();
        table.per_task.iter().filter(|p| seen.insert(p.task_id.clone())).count()
    };
    println!(
        "evaluation: split {}, {} tasks x {} effort values, {} samples/task",
        args.split,
        tasks,
        table.effort_grid.len(),
        table.samples_per_task
    );
    emit(&matrix_table("mean tokens", &table.rows, |row| format!("{:9.1}", row.mean_tokens)));
    emit(&matrix_table("accuracy", &table.rows, |row| format!("{:9.3}", row.accuracy)));
    emit(&format!("wrote {} and {}\n", csv_path.display(), json_path.display()));
    Ok(())
}

fn load_checkpoint_arg(path: &Path) -> Result<TrainerState, CliError> {
    if !path.exists() {
        return Err(CliError::missing_artifact(path, "run `aec train` first"));
    }
    load_checkpoint(path).map_err(CliError::from)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text_atomic(path, &text)?;
    Ok(())
}

fn load_eval(path: &Path, hint: &str) -> Result<EvalTable, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| CliError::missing_artifact(path, hint))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{} is not an evaluation table: {e}", path.display())))
}

/// Tier-by-effort table: one row per tier, one column per grid value.
fn matrix_table(title: &str, rows: &[EvalRow], cell: impl Fn(&EvalRow) -> String) -> String {
    let mut tiers: Vec<&str> = Vec::new();
    for row in rows {
        if !tiers.contains(&row.tier.as_str()) {
            tiers.push(&row.tier);
        }
    }
    let mut grid: Vec<f64> = rows.iter().map(|r| r.r).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let mut header = format!("  {:10}", "tier");
    for r in &grid {
        let _ = write!(header, "{:>9}", format!("r={r:.2}"));
    }
    let _ = writeln!(out, "{header}");
    for tier in tiers {
        let _ = write!(out, "  {tier:10}");
        for &r in &grid {
            match rows.iter().find(|row| row.tier == tier && row.r == r) {
                Some(row) => out.push_str(&cell(row)),
                None => {
                    let _ = write!(out, "{:>9}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

pub struct CalibrateArgs {
    pub run: PathBuf,
    pub invert: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationArtifact {
    table: CalibrationTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    vs_test: Option<CalibrationReportOwned>,
}

/// Serializable mirror of [`CalibrationReport`] (which is Copy and
/// serialize-only in the core crate).
#[derive(Debug, Serialize, Deserialize)]
struct CalibrationReportOwned {
    token_mean_abs: f64,
    token_mean_signed: f64,
    accuracy_mean_abs: f64,
    pairs: usize,
}

impl From<CalibrationReport> for CalibrationReportOwned {
    fn from(r: CalibrationReport) -> Self {
        CalibrationReportOwned {
            token_mean_abs: r.token_mean_abs,
            token_mean_signed: r.token_mean_signed,
            accuracy_mean_abs: r.accuracy_mean_abs,
            pairs: r.pairs,
        }
    }
}

/// Builds the effort-calibration curve from the validation-split eval and,
/// when a test-split eval exists, scores how well it transfers.
pub fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let run = RunPaths::new(&args.run);
    let validation = load_eval(
        &run.eval_json(Split::Validation),
        "run `aec eval --split validation` on this run first",
    )?;
    let table = calibrate(&validation)?;

    let analysis = args.out.unwrap_or_else(|| run.analysis());
    std::fs::create_dir_all(&analysis)?;
    let csv_path = analysis.join("calibration.csv");
    write_calibration_csv(&table, &csv_path)?;

    println!("calibration (validation split)");
    println!("  {:>6} {:>9} {:>9}", "r", "d(r)", "a(r)");
    for p in &table.points {
        println!("  {:>6.2} {:>9.4} {:>9.4}", p.r, p.d, p.a);
    }

    let test_path = run.eval_json(Split::Test);
    let vs_test = if test_path.exists() {
        let test = load_eval(&test_path, "unreachable")?;
        let report = calibration_error(&table, &test)?;
        println!("  transfer to the test split over {} (task, r) pairs:", report.pairs);
        println!("    token calibration error (mean abs): {:.4}", report.token_mean_abs);
        println!("    token calibration bias (signed):    {:+.4}", report.token_mean_signed);
        println!("    accuracy calibration error:         {:.4}", report.accuracy_mean_abs);
        Some(report.into())
    } else {
        println!("  (no test-split eval found; skipping the transfer check)");
        None
    };

    if let Some(desired) = args.invert {
        let inv = invert_calibration(&table, desired)?;
        let mut note = String::new();
        if inv.clamped {
            note.push_str(" (clamped to the grid edge)");
        }
        if inv.non_monotone {
            note.push_str(" (non-monotone d; monotone envelope used)");
        }
        println!("  desired token fraction {desired} -> r = {:.4}{note}", inv.r);
    }

    let artifact_path = analysis.join("calibration_report.json");
    write_json(&artifact_path, &CalibrationArtifact { table, vs_test })?;
    println!("wrote {} and {}", csv_path.display(), artifact_path.display());
    Ok(())
}

pub struct DepthArgs {
    pub run: PathBuf,
    pub lambda: f64,
    pub out: Option<PathBuf>,
}

/// Scans `kappa = error + lambda_d * tokens` per tier over the test-split
/// eval, with the stock per-tier price ratios applied to `--lambda`.
pub fn cmd_depth(args: DepthArgs) -> Result<(), CliError> {
    let run = RunPaths::new(&args.run);
    let test = load_eval(
        &run.eval_json(Split::Test),
        "run `aec eval --split test` on this run first",
    )?;
    let results = depth_per_tier(&test, args.lambda)?;

    let analysis = args.out.unwrap_or_else(|| run.analysis());
    std::fs::create_dir_all(&analysis)?;
    let csv_path = analysis.join("depth.csv");
    write_depth_csv(&results, &csv_path)?;

    println!("conceptual depth at base lambda {:.1e}", args.lambda);
    for result in &results {
        let slope = result
            .slope_at_optimum
            .map(|s| format!("{s:+.2e}"))
            .unwrap_or_else(|| "undefined".into());
        println!(
            "  {:8} lambda_d {:.2e}: r* = {:.2}, T* = {:8.1}, kappa* = {:.4}, dE/dT {} \
             (optimality target {:+.2e})",
            result.tier,
            result.lambda_d,
            result.r_star,
            result.t_star,
            result.points[result.opt_index].kappa,
            slope,
            -result.lambda_d,
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn depth_per_tier(table: &EvalTable, base_lambda: f64) -> Result<Vec<DepthResult>, CliError> {
    let mut tiers: Vec<&str> = Vec::new();
    for row in &table.rows {
        if !tiers.contains(&row.tier.as_str()) {
            tiers.push(&row.tier);
        }
    }
    let mut results = Vec::new();
    for tier in tiers {
        let rows: Vec<EvalRow> =
            table.rows.iter().filter(|row| row.tier == tier).cloned().collect();
        results.push(conceptual_depth(&rows, lambda_for_tier(base_lambda, tier))?);
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerChoice {
    /// Lengths drawn from the trained policy cell for the task's tier.
    Policy,
    /// Lengths drawn uniformly over the bucket menu: probes the environment
    /// independent of what the policy learned.
    Uniform,
}

pub struct DifficultyArgs {
    pub run: PathBuf,
    pub split: Split,
    pub samples: usize,
    pub budgets: Option<Vec<u32>>,
    pub sampler: SamplerChoice,
    pub r: f64,
    pub out: Option<PathBuf>,
}

/// Monte Carlo difficulty profiles `p_correct(budget)` and expected attempt
/// counts for every task of a split.
pub fn cmd_difficulty(args: DifficultyArgs) -> Result<(), CliError> {
    let run = RunPaths::new(&args.run);
    let state = load_checkpoint_arg(&run.final_checkpoint())?;
    if !run.suite().exists() {
        return Err(CliError::missing_artifact(&run.suite(), "run `aec train` first"));
    }
    let suite = TaskSuite::load_jsonl(&run.suite())?;
    let budgets = args
        .budgets
        .unwrap_or_else(|| state.params.bucket_lengths().to_vec());
    let effort_bin = state.params.effort_bin_for(args.r).ok_or_else(|| {
        CliError::Usage(format!("--r {} is not on the policy's effort grid", args.r))
    })?;

    let tasks = suite.tasks_in(args.split);
    if tasks.is_empty() {
        return Err(CliError::Usage(format!("no tasks in the {} split", args.split)));
    }
    let mut profiles = Vec::with_capacity(tasks.len());
    for task in &tasks {
        let difficulty_bin = if state.params.num_difficulty_bins() == 1 {
            0
        } else {
            suite.tier_index(&task.tier).unwrap_or(0)
        };
        let sampler = match args.sampler {
            SamplerChoice::Policy => LengthSampler::Policy {
                params: &state.params,
                obs: Observation { difficulty_bin, effort_bin },
            },
            SamplerChoice::Uniform => {
                LengthSampler::FixedUniform { lengths: state.params.bucket_lengths() }
            }
        };
        profiles.push(difficulty_profile(
            task,
            sampler,
            &budgets,
            args.samples,
            state.config.seed,
        )?);
    }

    let analysis = args.out.unwrap_or_else(|| run.analysis());
    std::fs::create_dir_all(&analysis)?;
    let csv_path = analysis.join("profiles.csv");
    write_profiles_csv(&profiles, &csv_path)?;
    let sampler_desc = match args.sampler {
        SamplerChoice::Policy => format!("trained policy at r = {}", args.r),
        SamplerChoice::Uniform => "uniform length menu".to_string(),
    };
    println!(
        "profiled {} {} tasks under the {} ({} samples each, {} budgets)",
        profiles.len(),
        args.split,
        sampler_desc,
        args.samples,
        budgets.len()
    );
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub struct ReportArgs {
    pub run: PathBuf,
    pub cost_lambda: f64,
    pub out: Option<PathBuf>,
}

/// Collates a run's artifacts into one plain-text summary document.
pub fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let run = RunPaths::new(&args.run);
    let manifest = RunManifest::load(&run.manifest())?;
    let probes = load_metrics(&run.metrics())?;
    let test = load_eval(
        &run.eval_json(Split::Test),
        "run `aec eval --split test` on this run first",
    )?;
    let validation = {
        let path = run.eval_json(Split::Validation);
        path.exists().then(|| load_eval(&path, "unreachable")).transpose()?
    };
    let transfer = {
        let path = run.eval_json(Split::Transfer);
        path.exists().then(|| load_eval(&path, "unreachable")).transpose()?
    };

    let text = build_report(
        &manifest,
        &probes,
        &test,
        validation.as_ref(),
        transfer.as_ref(),
        args.cost_lambda,
    )?;
    let analysis = args.out.unwrap_or_else(|| run.analysis());
    std::fs::create_dir_all(&analysis)?;
    // Materialize the r = 1 allocation curve the report summarizes.
    if let Ok(curve) = allocation_entries(&test, 1.0).and_then(|e| allocation_curve(&e)) {
        write_allocation_csv(&curve, &analysis.join("allocation.csv"))?;
    }
    let path = analysis.join("report.txt");
    write_text_atomic(&path, &text)?;
    emit(&text);
    emit(&format!("wrote {}\n", path.display()));
    Ok(())
}

fn load_metrics(path: &Path) -> Result<Vec<ProbeRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| CliError::missing_artifact(path, "run `aec train` first"))?;
    let mut probes = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        probes.push(serde_json::from_str(line).map_err(|e| {
            CliError::Usage(format!("{} is not a metrics log: {e}", path.display()))
        })?);
    }
    Ok(probes)
}

fn heading(out: &mut String, title: &str) {
    let _ = writeln!(out, "\n{title}");
    let _ = writeln!(out, "{}", "-".repeat(title.len()));
}

fn build_report(
    manifest: &RunManifest,
    probes: &[ProbeRecord],
    test: &EvalTable,
    validation: Option<&EvalTable>,
    transfer: Option<&EvalTable>,
    cost_lambda: f64,
) -> Result<String, CliError> {
    let mut out = String::new();
    let _ = writeln!(out, "adaptive effort control: run report");
    let _ = writeln!(out, "===================================");
    let _ = writeln!(out, "run    : {}", manifest.run_id);
    let _ = writeln!(out, "seed   : {}", manifest.seed);
    let _ = writeln!(out, "steps  : {}", manifest.config.steps);
    let _ = writeln!(out, "reward : {}", manifest.config.reward_spec.variant);
    let tier_names: Vec<&str> =
        manifest.config.tier_spec.iter().map(|t| t.name.as_str()).collect();
    let _ = writeln!(out, "tiers  : {}", tier_names.join(", "));

    heading(&mut out, "effort response (test split)");
    out.push_str(&matrix_table("mean tokens", &test.rows, |row| {
        format!("{:9.1}", row.mean_tokens)
    }));
    out.push_str(&matrix_table("accuracy", &test.rows, |row| {
        format!("{:9.3}", row.accuracy)
    }));

    heading(
        &mut out,
        &format!("learning dynamics: token power-law exponents (probe steps >= {MIN_FIT_STEP})"),
    );
    out.push_str(&beta_table(probes));

    heading(&mut out, "token allocation at r = 1 (test split, easiest tasks first)");
    match allocation_entries(test, 1.0).and_then(|e| allocation_curve(&e)) {
        Ok(curve) => {
            let _ = writeln!(
                out,
                "easiest 50% of tasks receive {:.1}% of all tokens",
                100.0 * curve.easiest_half_share()
            );
            let _ = write!(out, "prefix -> token share:");
            for i in 1..=10 {
                let p = i as f64 / 10.0;
                let _ = write!(out, "  {:.1}:{:.3}", p, curve.share_at(p));
            }
            out.push('\n');
        }
        Err(e) => {
            let _ = writeln!(out, "not available: {e}");
        }
    }

    heading(
        &mut out,
        &format!("net reward J = accuracy - lambda * tokens (lambda = {cost_lambda:.1e})"),
    );
    out.push_str(&matrix_table("J", &test.rows, |row| {
        format!("{:9.4}", row.accuracy - cost_lambda * row.mean_tokens)
    }));
    out.push_str(&best_effort_lines(test, cost_lambda));

    heading(&mut out, "calibration (validation -> test)");
    match validation {
        Some(validation) => {
            let table = calibrate(validation)?;
            let _ = writeln!(out, "  {:>6} {:>9} {:>9}", "r", "d(r)", "a(r)");
            for p in &table.points {
                let _ = writeln!(out, "  {:>6.2} {:>9.4} {:>9.4}", p.r, p.d, p.a);
            }
            let report = calibration_error(&table, test)?;
            let _ = writeln!(
                out,
                "token calibration error (mean abs) : {:.4}",
                report.token_mean_abs
            );
            let _ = writeln!(
                out,
                "token calibration bias (signed)    : {:+.4}",
                report.token_mean_signed
            );
            let _ = writeln!(
                out,
                "accuracy calibration error         : {:.4}",
                report.accuracy_mean_abs
            );
        }
        None => {
            let _ = writeln!(
                out,
                "not available: no validation-split eval (run `aec eval --split validation`)"
            );
        }
    }

    heading(&mut out, "conceptual depth: kappa = error + lambda_d * tokens");
    for base in DEFAULT_DEPTH_SWEEP {
        let results = depth_per_tier(test, base)?;
        let _ = writeln!(out, "base lambda {base:.1e}:");
        for result in &results {
            let slope = result
                .slope_at_optimum
                .map(|s| format!("{s:+.2e}"))
                .unwrap_or_else(|| "undefined".into());
            let _ = writeln!(
                out,
                "  {:8} lambda_d {:.2e}: r* = {:.2}, T* = {:8.1}, dE/dT {}",
                result.tier, result.lambda_d, result.r_star, result.t_star, slope
            );
        }
        out.push_str(&r_star_spread_line(test, &results));
    }

    if let Some(transfer) = transfer {
        heading(&mut out, "transfer split (out-of-domain tasks)");
        out.push_str(&matrix_table("mean tokens", &transfer.rows, |row| {
            format!("{:9.1}", row.mean_tokens)
        }));
        out.push_str(&matrix_table("accuracy", &transfer.rows, |row| {
            format!("{:9.3}", row.accuracy)
        }));
    }

    Ok(out)
}

/// Power-law exponent of the probe token series, per (tier, r).
fn beta_table(probes: &[ProbeRecord]) -> String {
    let mut tiers: Vec<&str> = Vec::new();
    for p in probes {
        if !tiers.contains(&p.tier.as_str()) {
            tiers.push(&p.tier);
        }
    }
    let mut grid: Vec<f64> = probes.iter().map(|p| p.r).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut out = String::new();
    let mut header = format!("  {:10}", "beta");
    for r in &grid {
        let _ = write!(header, "{:>9}", format!("r={r:.2}"));
    }
    let _ = writeln!(out, "{header}");
    for tier in tiers {
        let _ = write!(out, "  {tier:10}");
        for &r in &grid {
            let series: Vec<(u64, f64)> = probes
                .iter()
                .filter(|p| p.tier == tier && p.r == r && p.step >= MIN_FIT_STEP)
                .map(|p| (p.step, p.mean_tokens))
                .collect();
            match fit_power_law(&series) {
                Ok(fit) => {
                    let _ = write!(out, "{:>9.3}", fit.beta);
                }
                Err(_) => {
                    let _ = write!(out, "{:>9}", "n/a");
                }
            }
        }
        out.push('\n');
    }
    out
}

fn best_effort_lines(test: &EvalTable, cost_lambda: f64) -> String {
    let mut tiers: Vec<&str> = Vec::new();
    for row in &test.rows {
        if !tiers.contains(&row.tier.as_str()) {
            tiers.push(&row.tier);
        }
    }
    let mut out = String::from("best effort value per tier:");
    for tier in tiers {
        let best = test
            .rows
            .iter()
            .filter(|row| row.tier == tier)
            .max_by(|a, b| {
                let ja = a.accuracy - cost_lambda * a.mean_tokens;
                let jb = b.accuracy - cost_lambda * b.mean_tokens;
                ja.total_cmp(&jb)
            });
        if let Some(best) = best {
            let _ = write!(out, "  {tier} r={:.2}", best.r);
        }
    }
    out.push('\n');
    out
}

/// How far apart the per-tier kappa optima sit, in effort-grid steps.
fn r_star_spread_line(test: &EvalTable, results: &[DepthResult]) -> String {
    let mut grid: Vec<f64> = test.rows.iter().map(|r| r.r).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let index_of = |r: f64| grid.iter().position(|&g| (g - r).abs() < 1e-9);
    let indices: Vec<usize> = results.iter().filter_map(|d| index_of(d.r_star)).collect();
    if indices.len() != results.len() || results.is_empty() {
        return String::new();
    }
    let spread = indices.iter().max().unwrap() - indices.iter().min().unwrap();
    format!("  r* spread across tiers: {spread} grid step(s)\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use aec_core::evalkit::PerTaskRecord;

    fn row(tier: &str, r: f64, tokens: f64, accuracy: f64) -> EvalRow {
        EvalRow { tier: tier.into(), r, mean_tokens: tokens, accuracy, error: 1.0 - accuracy, tasks: 2 }
    }

    #[test]
    fn matrix_table_lays_out_tiers_by_grid() {
        let rows = vec![
            row("easy", 0.5, 100.0, 0.9),
            row("easy", 1.0, 200.0, 0.95),
            row("hard", 0.5, 800.0, 0.4),
            row("hard", 1.0, 1600.0, 0.7),
        ];
        let table = matrix_table("mean tokens", &rows, |r| format!("{:9.1}", r.mean_tokens));
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "mean tokens");
        assert!(lines[1].contains("r=0.50") && lines[1].contains("r=1.00"));
        assert!(lines[2].starts_with("  easy") && lines[2].contains("100.0"));
        assert!(lines[3].starts_with("  hard") && lines[3].contains("1600.0"));
    }

    #[test]
    fn depth_per_tier_keeps_tier_order_and_prices() {
        let table = EvalTable {
            effort_grid: vec![0.5, 1.0],
            samples_per_task: 1,
            rows: vec![
                row("easy", 0.5, 100.0, 0.9),
                row("easy", 1.0, 200.0, 0.95),
                row("hard", 0.5, 800.0, 0.4),
                row("hard", 1.0, 1600.0, 0.7),
            ],
            per_task: vec![],
        };
        let results = depth_per_tier(&table, 3e-3).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].tier, "easy");
        assert_eq!(results[0].lambda_d, 3e-3);
        assert_eq!(results[1].tier, "hard");
        assert_eq!(results[1].lambda_d, 3e-3 / 12.0);
    }

    #[test]
    fn beta_table_marks_thin_series() {
        let probes = vec![ProbeRecord {
            step: 100,
            tier: "easy".into(),
            r: 1.0,
            mean_tokens: 50.0,
            accuracy: 0.9,
            mean_reward: 0.5,
            grad_norm: 0.1,
        }];
        let table = beta_table(&probes);
        assert!(table.contains("n/a"));
    }

    #[test]
    fn report_covers_every_section_without_optional_artifacts() {
        let config = FileConfig::default_aec(1);
        let manifest = RunManifest::new(config);
        let mut probes = Vec::new();
        for step in (50..=250).step_by(25) {
            for tier in ["easy", "hard"] {
                probes.push(ProbeRecord {
                    step,
                    tier: tier.into(),
                    r: 1.0,
                    mean_tokens: 1000.0 * (step as f64).powf(-0.3),
                    accuracy: 0.8,
                    mean_reward: 0.5,
                    grad_norm: 0.2,
                });
            }
        }
        let test = EvalTable {
            effort_grid: vec![0.5, 1.0],
            samples_per_task: 4,
            rows: vec![
                row("easy", 0.5, 100.0, 0.9),
                row("easy", 1.0, 200.0, 0.95),
                row("hard", 0.5, 800.0, 0.4),
                row("hard", 1.0, 1600.0, 0.7),
            ],
            per_task: vec![
                PerTaskRecord { task_id: "a".into(), tier: "easy".into(), r: 0.5, mean_tokens: 100.0, accuracy: 0.9 },
                PerTaskRecord { task_id: "a".into(), tier: "easy".into(), r: 1.0, mean_tokens: 200.0, accuracy: 0.95 },
                PerTaskRecord { task_id: "b".into(), tier: "hard".into(), r: 0.5, mean_tokens: 800.0, accuracy: 0.4 },
                PerTaskRecord { task_id: "b".into(), tier: "hard".into(), r: 1.0, mean_tokens: 1600.0, accuracy: 0.7 },
            ],
        };
        let text = build_report(&manifest, &probes, &test, None, None, 1e-4).unwrap();
        for needle in [
            "effort response",
            "power-law",
            "beta",
            "easiest 50%",
            "net reward",
            "calibration",
            "conceptual depth",
            "r* spread",
        ] {
            assert!(text.contains(needle), "report lacks {needle:?}:\n{text}");
        }
        // Deterministic: no wall-clock content.
        let again = build_report(&manifest, &probes, &test, None, None, 1e-4).unwrap();
        assert_eq!(text, again);
    }
}
