//! Pipeline stages. Each stage reads its declared inputs from the output
//! directory and stages its outputs there.
//!
//! | stage    | reads                                   | writes |
//! |----------|-----------------------------------------|--------|
//! | generate | (config)                                | `dataset.csv`, `ground_truth.csv` |
//! | train    | `dataset.csv`                           | `model_<v>.json`, `train_log_<v>.json` |
//! | predict  | `dataset.csv`, `model_<v>.json`         | `predictions_<v>.csv` |
//! | allocate | `predictions_<v>.csv`                   | `plan_<v>.csv` |
//! | evaluate | `dataset.csv`, `plan_<v>.csv`           | `eval_<v>.json` |
//! | sweep    | `dataset.csv`                           | `curve_<v>.csv`, `cv_<v>.json`, `sweep_<v>.svg`, `curve_random.csv`, `cv_random.json` |
//! | report   | `cv_<v>.json`, `curve_<v>.csv`, random  | `report.md`, `metrics.json`, `lpa_vs_cost.svg` |
//!
//! `ground_truth.csv` is used by evaluate and sweep when present.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use cdee::allocator::{check_feasible, read_plan_csv, solve_lagrangian, write_plan_csv, AllocationProblem};
use cdee::datagen::{generate_rct, read_dataset_csv, read_ground_truth_csv, write_dataset_csv, write_ground_truth_csv, GroundTruth, RctDataset};
use cdee::evaluator::{
    estimate_policy_value, evaluate_out_of_fold, fall_back_unmatched, out_of_fold_predictions, out_of_fold_sweep, read_curve_csv,
    write_curve_csv, CurvePoint, CvReport, EvalReport, Scorer, DEFAULT_MULTIPLIER_TOLERANCE,
};
use cdee::metrics::MetricReport;
use cdee::model::{train, CdeeModel, PredictionMatrix, Variant};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, PipelineConfig};
use crate::output::Staging;
use crate::report::{lift_table, lpa_chart, metric_table};

pub const DATASET_FILE: &str = "dataset.csv";
pub const TRUTH_FILE: &str = "ground_truth.csv";
pub const REPORT_FILE: &str = "report.md";
pub const METRICS_FILE: &str = "metrics.json";
pub const CHART_FILE: &str = "lpa_vs_cost.svg";
pub const RANDOM: &str = "random";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Predict,
    Allocate,
    Evaluate,
    Sweep,
    Report,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or input contents; exit code 1.
    Validation(String),
    /// Missing files, I/O and numerical failures; exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<cdee::Error> for CliError {
    fn from(e: cdee::Error) -> Self {
        use cdee::Error as E;
        match e {
            E::Validation(_) | E::Shape(_) | E::Domain(_) | E::MultipleArms { .. } | E::InvalidPlan { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Resolved invocation: configuration plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub variants: Vec<Variant>,
    pub budget_grid: Option<Vec<f64>>,
}

impl Context {
    pub fn new(config: PipelineConfig, out: PathBuf) -> Self {
        Self {
            variants: config.variants.clone(),
            config,
            out,
            budget_grid: None,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn grid_for(&self, n: usize) -> CliResult<Vec<f64>> {
        let grid = self.budget_grid.clone().unwrap_or_else(|| self.config.grid_for(n));
        check_grid(&grid)?;
        Ok(grid)
    }
}

fn check_grid(grid: &[f64]) -> CliResult<()> {
    if grid.is_empty() || grid.iter().any(|b| !(*b >= 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Validation(format!(
            "budget grid {grid:?} must be nonempty, nonnegative and strictly increasing"
        )));
    }
    Ok(())
}

/// Parses a comma-delimited, strictly increasing budget list such as
/// `100,250.5,1e3`.
pub fn parse_budget_grid(text: &str) -> CliResult<Vec<f64>> {
    let grid = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Validation(format!("--budget-grid entry {t:?}: {e}")))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    check_grid(&grid)?;
    Ok(grid)
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Runtime(format!("missing input {}: {e}", path.display())))
}

fn load_dataset(ctx: &Context) -> CliResult<RctDataset> {
    let incentives = ctx.config.gen_config().incentives;
    Ok(read_dataset_csv(open(&ctx.path(DATASET_FILE))?, incentives)?)
}

fn load_truth(ctx: &Context, dataset: &RctDataset) -> CliResult<Option<GroundTruth>> {
    let path = ctx.path(TRUTH_FILE);
    if !path.exists() {
        info!("{} not found; skipping ground-truth lift", path.display());
        return Ok(None);
    }
    let truth = read_ground_truth_csv(open(&path)?, dataset.num_arms())?;
    let ids: Vec<u64> = dataset.records.iter().map(|r| r.customer_id).collect();
    if truth.customer_ids != ids {
        return Err(CliError::Validation(format!("{} rows do not match {DATASET_FILE}", path.display())));
    }
    Ok(Some(truth))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Runs one stage and returns the files it wrote.
pub fn run(command: Command, ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let mut stage = Staging::new(&ctx.out)?;
    match command {
        Command::Generate => generate(ctx, &mut stage)?,
        Command::Train => train_variants(ctx, &mut stage)?,
        Command::Predict => predict(ctx, &mut stage)?,
        Command::Allocate => allocate(ctx, &mut stage)?,
        Command::Evaluate => evaluate(ctx, &mut stage)?,
        Command::Sweep => sweep(ctx, &mut stage)?,
        Command::Report => report(ctx, &mut stage)?,
    }
    Ok(stage.commit()?)
}

fn generate(ctx: &Context, stage: &mut Staging) -> CliResult<()> {
    let gen = ctx.config.gen_config();
    let (dataset, truth) = generate_rct(&gen)?;
    info!("generated {} customers over {} arms", dataset.len(), dataset.num_arms());
    let mut bytes = Vec::new();
    write_dataset_csv(&dataset, &mut bytes)?;
    stage.write(DATASET_FILE, &bytes)?;
    let mut bytes = Vec::new();
    write_ground_truth_csv(&truth, &mut bytes)?;
    stage.write(TRUTH_FILE, &bytes)?;
    Ok(())
}

fn train_variants(ctx: &Context, stage: &mut Staging) -> CliResult<()> {
    let dataset = load_dataset(ctx)?;
    for &v in &ctx.variants {
        let (model, log) = train(&dataset, &ctx.config.model_config(v))?;
        info!("{v}: best epoch {} of {}, validation loss {:.6}", log.best_epoch, log.epochs.len(), log.best_validation_loss);
        for w in &log.warnings {
            warn!("{v}: {w}");
        }
        let mut bytes = Vec::new();
        model.save(&mut bytes)?;
        stage.write(&format!("model_{v}.json"), &bytes)?;
        stage.write(&format!("train_log_{v}.json"), &to_json(&log)?)?;
    }
    Ok(())
}

fn predict(ctx: &Context, stage: &mut Staging) -> CliResult<()> {
    let dataset = load_dataset(ctx)?;
    let customers = dataset.customers();
    for &v in &ctx.variants {
        let model = CdeeModel::load(open(&ctx.path(&format!("model_{v}.json")))?)?;
        if model.incentive_count() != dataset.num_arms() {
            return Err(CliError::Validation(format!(
                "model_{v}.json scores {} incentives, dataset has {}",
                model.incentive_count(),
                dataset.num_arms()
            )));
        }
        let preds = model.predict_matrix(&customers)?;
        let mut bytes = Vec::new();
        preds.write_csv(&mut bytes)?;
        stage.write(&format!("predictions_{v}.csv"), &bytes)?;
    }
    Ok(())
}

fn allocate(ctx: &Context, stage: &mut Staging) -> CliResult<()> {
    let coupons: Vec<f64> = ctx.config.gen_config().incentives.iter().map(|i| i.coupon_value).collect();
    for &v in &ctx.variants {
        let preds = PredictionMatrix::read_csv(open(&ctx.path(&format!("predictions_{v}.csv")))?)?;
        let budget = ctx.config.budget_for(preds.num_customers());
        let problem = AllocationProblem::from_predictions(&preds, coupons.clone(), budget)?;
        let solution = solve_lagrangian(&problem, DEFAULT_MULTIPLIER_TOLERANCE)?;
        let feas = check_feasible(&solution.plan, &problem)?;
        info!(
            "{v}: budget {budget:.2}, planned cost {:.2}, value {:.2}, dual bound {:.2}",
            feas.total_expected_cost, solution.plan.total_value, solution.dual_bound
        );
        let mut bytes = Vec::new();
        write_plan_csv(&preds.customer_ids, &solution.plan, &mut bytes)?;
        stage.write(&format!("plan_{v}.csv"), &bytes)?;
    }
    Ok(())
}

/// Contents of `eval_<v>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvaluation {
    pub variant: Variant,
    /// Customers moved to control because their planned arm had no RCT match.
    pub moved_to_control: usize,
    pub true_lpa: Option<f64>,
    pub report: EvalReport,
}

fn evaluate(ctx: &Context, stage: &mut Staging) -> CliResult<()> {
    let dataset = load_dataset(ctx)?;
    let truth = load_truth(ctx, &dataset)?;
    let dataset_ids: Vec<u64> = dataset.records.iter().map(|r| r.customer_id).collect();
    for &v in &ctx.variants {
        let name = format!("plan_{v}.csv");
        let (ids, choice) = read_plan_csv(open(&ctx.path(&name))?)?;
        if ids != dataset_ids {
            return Err(CliError::Validation(format!("{name} customers do not match {DATASET_FILE}")));
        }
        let (choice, moved) = fall_back_unmatched(&dataset, &choice)?;
        if moved > 0 {
            warn!("{v}: {moved} customers planned into arms without RCT matches were evaluated under control");
        }
        let report = estimate_policy_value(&dataset, &choice)?;
        let true_lpa = truth.as_ref().map(|t| t.policy_lift(&choice, dataset.control_arm()));
        info!("{v}: estimated LPA {:.2}, estimated cost {:.2}", report.lpa, report.cost_estimate);
        let eval = PlanEvaluation {
            variant: v,
            moved_to_control: moved,
            true_lpa,
            report,
        };
        stage.write(&format!("eval_{v}.json"), &to_json(&eval)?)?;
    }
    Ok(())
}

fn curve_bytes(curve: &[CurvePoint]) -> CliResult<Vec<u8>> {
    let mut bytes = Vec::new();
    write_curve_csv(curve, &mut bytes)?;
    Ok(bytes)
}

fn sweep(ctx: &Context, stage: &mut Staging) -> CliResult<()> {
    let dataset = load_dataset(ctx)?;
    let truth = load_truth(ctx, &dataset)?;
    let n = dataset.len();
    let grid = ctx.grid_for(n)?;
    let budget = ctx.config.budget_for(n);
    let (k, seed) = (ctx.config.k_folds, ctx.config.seed);

    let random = out_of_fold_predictions(&dataset, &Scorer::Random, k, seed)?;
    let random_curve = out_of_fold_sweep(&dataset, &random, &grid, truth.as_ref())?;
    let random_cv = evaluate_out_of_fold(&dataset, &random, budget, truth.as_ref())?;
    stage.write(&format!("curve_{RANDOM}.csv"), &curve_bytes(&random_curve)?)?;
    stage.write(&format!("cv_{RANDOM}.json"), &to_json(&random_cv)?)?;

    for &v in &ctx.variants {
        let oof = out_of_fold_predictions(&dataset, &Scorer::Model(ctx.config.model_config(v)), k, seed)?;
        let curve = out_of_fold_sweep(&dataset, &oof, &grid, truth.as_ref())?;
        let cv = evaluate_out_of_fold(&dataset, &oof, budget, truth.as_ref())?;
        info!("{v}: cross-validated LPA {:.2} at budget {budget:.2}", cv.lpa);
        let moved: usize = curve.iter().map(|p| p.moved_to_control).sum();
        if moved > 0 {
            warn!("{v}: {moved} customer-budget pairs evaluated under control for lack of RCT matches");
        }
        stage.write(&format!("curve_{v}.csv"), &curve_bytes(&curve)?)?;
        stage.write(&format!("cv_{v}.json"), &to_json(&cv)?)?;
        let chart = lpa_chart(&[(v.name().to_string(), curve), (RANDOM.to_string(), random_curve.clone())]);
        stage.write(&format!("sweep_{v}.svg"), chart.as_bytes())?;
    }
    Ok(())
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub budget: f64,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub metrics: Option<MetricReport>,
    pub lpa: f64,
    pub cost_estimate: f64,
    pub planned_cost: f64,
    pub true_lpa: Option<f64>,
}

fn summary_row(policy: &str, cv: &CvReport) -> SummaryRow {
    SummaryRow {
        policy: policy.to_string(),
        metrics: cv.metrics,
        lpa: cv.lpa,
        cost_estimate: cv.cost_estimate,
        planned_cost: cv.planned_cost,
        true_lpa: cv.true_lpa,
    }
}

fn at_budget(cv: &CvReport) -> CurvePoint {
    CurvePoint {
        budget: cv.budget,
        cost: cv.cost_estimate,
        planned_cost: cv.planned_cost,
        lpa: cv.lpa,
        value: cv.value,
        true_lpa: cv.true_lpa,
        moved_to_control: cv.moved_to_control,
    }
}

fn report(ctx: &Context, stage: &mut Staging) -> CliResult<()> {
    let mut policies: Vec<String> = ctx.variants.iter().map(|v| v.name().to_string()).collect();
    policies.push(RANDOM.to_string());
    let mut cvs = Vec::with_capacity(policies.len());
    let mut curves = Vec::with_capacity(policies.len());
    for p in &policies {
        let cv: CvReport = read_json(&ctx.path(&format!("cv_{p}.json")))?;
        let curve = read_curve_csv(open(&ctx.path(&format!("curve_{p}.csv")))?)?;
        cvs.push(cv);
        curves.push((p.clone(), curve));
    }
    let budget = cvs[0].budget;
    if cvs.iter().any(|c| c.budget != budget) {
        return Err(CliError::Validation("cross-validation reports were produced at different budgets".into()));
    }

    let model_rows: Vec<(String, Option<MetricReport>)> = policies
        .iter()
        .zip(&cvs)
        .take(ctx.variants.len())
        .map(|(p, cv)| (p.clone(), cv.metrics))
        .collect();
    let lift_rows: Vec<(String, CurvePoint)> = policies.iter().zip(&cvs).map(|(p, cv)| (p.clone(), at_budget(cv))).collect();

    let mut md = String::from("# Held-out evaluation\n\n## Prediction metrics\n\n");
    md.push_str(&metric_table(&model_rows));
    md.push_str("\n## Lift purchase amount\n\n");
    md.push_str(&lift_table(budget, &lift_rows));
    md.push_str("\n## Budget sweep\n\n| policy | budget | cost | LPA | true LPA |\n|---|---:|---:|---:|---:|\n");
    for (p, curve) in &curves {
        for pt in curve {
            let truth = pt.true_lpa.map_or("n/a".to_string(), |t| format!("{t:.2}"));
            md.push_str(&format!("| {p} | {:.2} | {:.2} | {:.2} | {truth} |\n", pt.budget, pt.cost, pt.lpa));
        }
    }
    md.push_str(&format!("\n![LPA vs cost]({CHART_FILE})\n"));

    let summary = MetricsSummary {
        budget,
        rows: policies.iter().zip(&cvs).map(|(p, cv)| summary_row(p, cv)).collect(),
    };
    stage.write(REPORT_FILE, md.as_bytes())?;
    stage.write(METRICS_FILE, &to_json(&summary)?)?;
    stage.write(CHART_FILE, lpa_chart(&curves).as_bytes())?;
    Ok(())
}
