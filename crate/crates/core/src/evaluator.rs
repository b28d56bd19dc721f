//! Offline policy evaluation on RCT logs with the matched-arm estimator.
//!
//! For a plan `z`, customers whose planned arm equals their randomized arm
//! are "matched". Each arm's matched outcome total is scaled by
//! `policy_count / matched_count` to estimate what the whole planned group
//! would produce, and the arm estimates are summed.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::allocator::{solve_lagrangian, AllocationProblem};
use crate::datagen::{GroundTruth, RctDataset, RctRecord};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{train, CdeeConfig, PredictionMatrix, PredictionTriple, TrainingLog};
use crate::rng::SeededRng;

/// Matched counts below this draw a high-variance warning.
pub const DEFAULT_MIN_MATCHED: usize = 30;
/// Relative bracket width at which the budget multiplier search stops.
pub const DEFAULT_MULTIPLIER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmEstimate {
    pub arm: usize,
    /// Customers the plan sends to this arm.
    pub policy_count: usize,
    /// Of those, customers the RCT also assigned to this arm.
    pub matched_count: usize,
    /// RCT arm size.
    pub rct_count: usize,
    /// Outcome total over matched customers.
    pub arm_total: f64,
    /// `arm_total · policy_count / matched_count` (0 when unused).
    pub arm_estimate: f64,
    /// `policy_count / |N|`.
    pub policy_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub customers: usize,
    pub arms: Vec<ArmEstimate>,
    /// Estimated total enduring amount of the plan.
    pub value: f64,
    /// `Σ_j share_j · (arm_total_j / matched_count_j)`, i.e. `value / |N|`.
    pub per_capita_value: f64,
    /// Estimated total under the all-control plan.
    pub control_value: f64,
    /// Lift purchase amount: `value − control_value`.
    pub lpa: f64,
    /// Estimated realized coupon cost of the plan.
    pub cost_estimate: f64,
    pub warnings: Vec<String>,
}

fn check_plan(dataset: &RctDataset, choice: &[usize]) -> Result<()> {
    if choice.len() != dataset.len() {
        return Err(Error::Shape(format!("plan covers {} customers, dataset has {}", choice.len(), dataset.len())));
    }
    let bad: Vec<usize> = choice.iter().enumerate().filter(|(_, &j)| j >= dataset.num_arms()).map(|(i, _)| i).collect();
    if !bad.is_empty() {
        return Err(Error::InvalidPlan {
            customers: bad,
            reason: "arm index out of range".into(),
        });
    }
    Ok(())
}

/// Per-arm counts, totals and the aggregate estimate of `outcome`. The
/// aggregate is accumulated customer by customer with each matched outcome
/// weighted by its arm's scale factor, so a plan equal to the RCT assignment
/// reproduces the raw observed total bit for bit.
fn matched_estimate(dataset: &RctDataset, choice: &[usize], outcome: impl Fn(&RctRecord) -> f64) -> Result<(Vec<ArmEstimate>, f64)> {
    check_plan(dataset, choice)?;
    let m = dataset.num_arms();
    let n = dataset.len();
    let rct_counts = dataset.arm_counts();
    let mut policy = vec![0usize; m];
    let mut matched = vec![0usize; m];
    let mut totals = vec![0.0; m];
    for (r, &j) in dataset.records.iter().zip(choice) {
        policy[j] += 1;
        if r.arm == j {
            matched[j] += 1;
            totals[j] += outcome(r);
        }
    }
    for j in 0..m {
        if policy[j] > 0 && matched[j] == 0 {
            return Err(Error::EstimationImpossible {
                arm: j,
                policy_count: policy[j],
            });
        }
    }
    let scale: Vec<f64> = (0..m)
        .map(|j| if matched[j] > 0 { policy[j] as f64 / matched[j] as f64 } else { 0.0 })
        .collect();
    let total = dataset
        .records
        .iter()
        .zip(choice)
        .filter(|(r, &j)| r.arm == j)
        .map(|(r, &j)| outcome(r) * scale[j])
        .sum();
    let arms = (0..m)
        .map(|j| ArmEstimate {
            arm: j,
            policy_count: policy[j],
            matched_count: matched[j],
            rct_count: rct_counts[j],
            arm_total: totals[j],
            arm_estimate: totals[j] * scale[j],
            policy_share: if n > 0 { policy[j] as f64 / n as f64 } else { 0.0 },
        })
        .collect();
    Ok((arms, total))
}

/// Full report for `choice` (one arm per dataset record, in order).
pub fn estimate_policy_value(dataset: &RctDataset, choice: &[usize]) -> Result<EvalReport> {
    estimate_policy_value_with(dataset, choice, DEFAULT_MIN_MATCHED)
}

pub fn estimate_policy_value_with(dataset: &RctDataset, choice: &[usize], min_matched: usize) -> Result<EvalReport> {
    let (arms, value) = matched_estimate(dataset, choice, |r| r.y)?;
    let control_value = control_value(dataset)?;
    let cost_estimate = estimate_policy_cost(dataset, choice)?;
    let mut warnings = Vec::new();
    for a in &arms {
        if a.policy_count > 0 && a.matched_count < min_matched {
            let msg = format!("arm {} estimate rests on {} matched customers", a.arm, a.matched_count);
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let n = dataset.len();
    Ok(EvalReport {
        customers: n,
        arms,
        value,
        per_capita_value: if n > 0 { value / n as f64 } else { 0.0 },
        control_value,
        lpa: value - control_value,
        cost_estimate,
        warnings,
    })
}

/// Matched-arm estimate of the coupon cost actually paid, `c_{z_i} · s_i`.
pub fn estimate_policy_cost(dataset: &RctDataset, choice: &[usize]) -> Result<f64> {
    let coupons = dataset.coupon_values();
    let (_, cost) = matched_estimate(dataset, choice, |r| if r.s { coupons[r.arm] } else { 0.0 })?;
    Ok(cost)
}

/// Moves customers planned into an arm that has no matched RCT customer to
/// the control arm, the only change that keeps the matched-arm estimator
/// defined without raising cost. If control then has planned customers but
/// no match, the first RCT-control customer is moved to control as well.
/// Returns the adjusted plan and the number of customers moved.
pub fn fall_back_unmatched(dataset: &RctDataset, choice: &[usize]) -> Result<(Vec<usize>, usize)> {
    check_plan(dataset, choice)?;
    let mut matched = vec![false; dataset.num_arms()];
    for (r, &j) in dataset.records.iter().zip(choice) {
        if r.arm == j {
            matched[j] = true;
        }
    }
    let control = dataset.control_arm();
    let mut moved = 0;
    let mut adjusted: Vec<usize> = choice
        .iter()
        .map(|&j| {
            if matched[j] || j == control {
                j
            } else {
                moved += 1;
                control
            }
        })
        .collect();
    let control_planned = adjusted.contains(&control);
    let control_matched = dataset.records.iter().zip(&adjusted).any(|(r, &j)| j == control && r.arm == control);
    if control_planned && !control_matched {
        if let Some(i) = dataset.records.iter().position(|r| r.arm == control) {
            adjusted[i] = control;
            moved += 1;
        }
    }
    if moved > 0 {
        warn!("{moved} customers planned into unmatched arms evaluated under control");
    }
    Ok((adjusted, moved))
}

fn control_value(dataset: &RctDataset) -> Result<f64> {
    let control = dataset.control_arm();
    Ok(matched_estimate(dataset, &vec![control; dataset.len()], |r| r.y)?.1)
}

/// `E(Y | plan) − E(Y | everyone gets the control arm)`.
pub fn lift_purchase_amount(dataset: &RctDataset, choice: &[usize]) -> Result<f64> {
    let (_, value) = matched_estimate(dataset, choice, |r| r.y)?;
    Ok(value - control_value(dataset)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: f64,
    /// Estimated realized coupon cost.
    pub cost: f64,
    /// Predicted expected cost the allocator planned for.
    pub planned_cost: f64,
    pub lpa: f64,
    pub value: f64,
    /// Exact lift under the generator, when ground truth is supplied.
    pub true_lpa: Option<f64>,
    /// Customers moved to control by [`fall_back_unmatched`].
    pub moved_to_control: usize,
}

fn check_budget_grid(budgets: &[f64]) -> Result<()> {
    if budgets.is_empty() {
        return Err(Error::Validation("budget grid is empty".into()));
    }
    if budgets.iter().any(|b| b.is_nan() || *b < 0.0) {
        return Err(Error::Validation("budgets must be nonnegative".into()));
    }
    if budgets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("budgets must be strictly increasing".into()));
    }
    Ok(())
}

/// Allocates with the Lagrangian solver at each budget and evaluates on the
/// RCT data (and on `truth` when given, rows aligned with `dataset`).
/// Customers in arms without a matched RCT customer are evaluated under
/// control, see [`fall_back_unmatched`].
pub fn budget_sweep(
    dataset: &RctDataset,
    predictions: &PredictionMatrix,
    budgets: &[f64],
    truth: Option<&GroundTruth>,
) -> Result<Vec<CurvePoint>> {
    check_budget_grid(budgets)?;
    check_alignment(dataset, predictions, truth)?;
    let coupons = dataset.coupon_values();
    let control = dataset.control_arm();
    budgets
        .iter()
        .map(|&budget| {
            let problem = AllocationProblem::from_predictions(predictions, coupons.clone(), budget)?;
            let plan = solve_lagrangian(&problem, DEFAULT_MULTIPLIER_TOLERANCE)?.plan;
            let (choice, moved) = fall_back_unmatched(dataset, &plan.choice)?;
            let report = estimate_policy_value(dataset, &choice)?;
            Ok(CurvePoint {
                budget,
                cost: report.cost_estimate,
                planned_cost: problem.plan_cost(&choice),
                lpa: report.lpa,
                value: report.value,
                true_lpa: truth.map(|t| t.policy_lift(&choice, control)),
                moved_to_control: moved,
            })
        })
        .collect()
}

fn check_alignment(dataset: &RctDataset, predictions: &PredictionMatrix, truth: Option<&GroundTruth>) -> Result<()> {
    if predictions.num_arms != dataset.num_arms() {
        return Err(Error::Shape(format!(
            "predictions cover {} arms, dataset has {}",
            predictions.num_arms,
            dataset.num_arms()
        )));
    }
    let ids_match = predictions.customer_ids.len() == dataset.len()
        && predictions.customer_ids.iter().zip(&dataset.records).all(|(&id, r)| id == r.customer_id);
    if !ids_match {
        return Err(Error::Validation("prediction rows do not match dataset customers".into()));
    }
    if let Some(t) = truth {
        let ok = t.customer_ids.len() == dataset.len() && t.customer_ids.iter().zip(&dataset.records).all(|(&id, r)| id == r.customer_id);
        if !ok || t.mu_enduring.cols() != dataset.num_arms() {
            return Err(Error::Validation("ground truth rows do not match dataset customers".into()));
        }
    }
    Ok(())
}

/// Writes `budget,cost,planned_cost,lpa,value,true_lpa,moved_to_control`.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv<R: std::io::Read>(input: R) -> Result<Vec<CurvePoint>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Source of held-out predictions.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Model(CdeeConfig),
    /// Uniform noise: propensities in (0, 1), amounts in `(0, 2 · mean y)`
    /// of the training folds.
    Random,
}

/// Fold index per record: a seeded shuffle dealt round-robin.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Validation(format!("k_folds = {k} must be at least 2")));
    }
    if k > n {
        return Err(Error::Validation(format!("{k} folds for {n} customers")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::with_stream(seed, 5).shuffle(&mut order);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(fold)
}

/// Out-of-fold predictions: every customer scored by a model that never saw
/// them.
#[derive(Debug, Clone)]
pub struct OutOfFold {
    pub k_folds: usize,
    pub fold_of: Vec<usize>,
    /// Rows in dataset order.
    pub predictions: PredictionMatrix,
    pub training_logs: Vec<TrainingLog>,
}

impl OutOfFold {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }
}

pub fn random_predictions(customer_ids: Vec<u64>, num_arms: usize, amount_scale: f64, seed: u64) -> Result<PredictionMatrix> {
    let mut rng = SeededRng::with_stream(seed, 6);
    let triples = (0..customer_ids.len() * num_arms)
        .map(|_| PredictionTriple {
            f_direct: rng.uniform(),
            f_enduring_prop: rng.uniform(),
            f_amount: rng.uniform() * amount_scale,
        })
        .collect();
    PredictionMatrix::new(customer_ids, num_arms, triples)
}

/// Trains (or draws random scores) on `k − 1` folds and predicts the held-out
/// fold, for every fold. Fold `f` uses seed `derive_seed(seed, f)`.
pub fn out_of_fold_predictions(dataset: &RctDataset, scorer: &Scorer, k_folds: usize, seed: u64) -> Result<OutOfFold> {
    let n = dataset.len();
    let m = dataset.num_arms();
    let fold_of = assign_folds(n, k_folds, seed)?;
    let mut triples = vec![
        PredictionTriple {
            f_direct: 0.0,
            f_enduring_prop: 0.0,
            f_amount: 0.0,
        };
        n * m
    ];
    let mut logs = Vec::new();
    for fold in 0..k_folds {
        let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let rest: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let held_set = dataset.subset(&held);
        let counts = held_set.arm_counts();
        if let Some(arm) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EstimationImpossible {
                arm,
                policy_count: held.len(),
            });
        }
        let train_set = dataset.subset(&rest);
        let fold_seed = SeededRng::derive_seed(seed, fold as u64);
        let preds = match scorer {
            Scorer::Model(config) => {
                let mut config = config.clone();
                config.seed = fold_seed;
                let (model, log) = train(&train_set, &config)?;
                logs.push(log);
                model.predict_matrix(&held_set.customers())?
            }
            Scorer::Random => {
                let mean_y = train_set.records.iter().map(|r| r.y).sum::<f64>() / train_set.len().max(1) as f64;
                random_predictions(held_set.records.iter().map(|r| r.customer_id).collect(), m, 2.0 * mean_y.max(1e-12), fold_seed)?
            }
        };
        for (row, &i) in held.iter().enumerate() {
            for j in 0..m {
                triples[i * m + j] = *preds.get(row, j);
            }
        }
    }
    Ok(OutOfFold {
        k_folds,
        fold_of,
        predictions: PredictionMatrix::new(dataset.records.iter().map(|r| r.customer_id).collect(), m, triples)?,
        training_logs: logs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub size: usize,
    pub budget: f64,
    pub planned_cost: f64,
    pub eval: EvalReport,
    pub true_lpa: Option<f64>,
    pub moved_to_control: usize,
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub budget: f64,
    pub folds: Vec<FoldReport>,
    /// Sums over folds.
    pub value: f64,
    pub lpa: f64,
    pub cost_estimate: f64,
    pub planned_cost: f64,
    pub true_lpa: Option<f64>,
    pub moved_to_control: usize,
    /// Metrics on the pooled held-out predictions at each customer's RCT arm.
    pub metrics: Option<MetricReport>,
}

/// Metrics of predictions at the randomized arm against observed outcomes.
pub fn observed_arm_metrics(dataset: &RctDataset, predictions: &PredictionMatrix) -> Result<MetricReport> {
    let mut scores = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    let mut amount = Vec::with_capacity(dataset.len());
    let mut actual = Vec::with_capacity(dataset.len());
    for (i, r) in dataset.records.iter().enumerate() {
        let t = predictions.get(i, r.arm);
        scores.push(t.f_direct);
        labels.push(r.s);
        amount.push(t.f_amount);
        actual.push(r.y);
    }
    MetricReport::compute(&scores, &labels, &amount, &actual)
}

fn metrics_or_warn(dataset: &RctDataset, predictions: &PredictionMatrix) -> Option<MetricReport> {
    match observed_arm_metrics(dataset, predictions) {
        Ok(m) => Some(m),
        Err(e) => {
            warn!("metrics unavailable: {e}");
            None
        }
    }
}

/// Allocates within each held-out fold at `budget · |fold| / |N|` and
/// evaluates on that fold's RCT records only, with
/// [`fall_back_unmatched`] applied per fold.
pub fn evaluate_out_of_fold(dataset: &RctDataset, oof: &OutOfFold, budget: f64, truth: Option<&GroundTruth>) -> Result<CvReport> {
    check_alignment(dataset, &oof.predictions, truth)?;
    let coupons = dataset.coupon_values();
    let control = dataset.control_arm();
    let n = dataset.len() as f64;
    let mut folds = Vec::with_capacity(oof.k_folds);
    for fold in 0..oof.k_folds {
        let idx = oof.fold_indices(fold);
        let data = dataset.subset(&idx);
        let preds = oof.predictions.subset(&idx);
        let fold_budget = budget * idx.len() as f64 / n;
        let problem = AllocationProblem::from_predictions(&preds, coupons.clone(), fold_budget)?;
        let plan = solve_lagrangian(&problem, DEFAULT_MULTIPLIER_TOLERANCE)?.plan;
        let (choice, moved) = fall_back_unmatched(&data, &plan.choice)?;
        let eval = estimate_policy_value(&data, &choice)?;
        folds.push(FoldReport {
            fold,
            size: idx.len(),
            budget: fold_budget,
            planned_cost: problem.plan_cost(&choice),
            eval,
            true_lpa: truth.map(|t| t.subset(&idx).policy_lift(&choice, control)),
            moved_to_control: moved,
            metrics: metrics_or_warn(&data, &preds),
        });
    }
    Ok(CvReport {
        budget,
        value: folds.iter().map(|f| f.eval.value).sum(),
        lpa: folds.iter().map(|f| f.eval.lpa).sum(),
        cost_estimate: folds.iter().map(|f| f.eval.cost_estimate).sum(),
        planned_cost: folds.iter().map(|f| f.planned_cost).sum(),
        true_lpa: truth.map(|_| folds.iter().map(|f| f.true_lpa.unwrap_or(0.0)).sum()),
        moved_to_control: folds.iter().map(|f| f.moved_to_control).sum(),
        metrics: metrics_or_warn(dataset, &oof.predictions),
        folds,
    })
}

/// Cross-validated end-to-end evaluation at one budget.
pub fn cross_validated_eval(
    dataset: &RctDataset,
    scorer: &Scorer,
    k_folds: usize,
    budget: f64,
    seed: u64,
    truth: Option<&GroundTruth>,
) -> Result<CvReport> {
    let oof = out_of_fold_predictions(dataset, scorer, k_folds, seed)?;
    evaluate_out_of_fold(dataset, &oof, budget, truth)
}

/// Budget sweep on out-of-fold predictions, each point pooled over folds.
pub fn out_of_fold_sweep(dataset: &RctDataset, oof: &OutOfFold, budgets: &[f64], truth: Option<&GroundTruth>) -> Result<Vec<CurvePoint>> {
    check_budget_grid(budgets)?;
    budgets
        .iter()
        .map(|&b| {
            let r = evaluate_out_of_fold(dataset, oof, b, truth)?;
            Ok(CurvePoint {
                budget: b,
                cost: r.cost_estimate,
                planned_cost: r.planned_cost,
                lpa: r.lpa,
                value: r.value,
                true_lpa: r.true_lpa,
                moved_to_control: r.moved_to_control,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_rct, GenConfig, Incentive};

    fn record(id: u64, arm: usize, s: bool, y: f64) -> RctRecord {
        RctRecord {
            customer_id: id,
            features: [1.0; 5],
            arm,
            s,
            y,
        }
    }

    /// Arm 0 control, arm 1 a coupon worth 2.
    fn hand_dataset() -> RctDataset {
        RctDataset::new(
            vec![
                record(0, 0, false, 1.0),
                record(1, 0, true, 3.0),
                record(2, 0, false, 2.0),
                record(3, 1, true, 10.0),
                record(4, 1, false, 0.0),
                record(5, 1, true, 5.0),
            ],
            vec![Incentive::control(), Incentive::coupon("c", 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn full_match_returns_observed_total() {
        let d = hand_dataset();
        let rct: Vec<usize> = d.records.iter().map(|r| r.arm).collect();
        let r = estimate_policy_value(&d, &rct).unwrap();
        assert_eq!(r.value, d.records.iter().map(|r| r.y).sum::<f64>());
        assert_eq!(estimate_policy_cost(&d, &rct).unwrap(), 4.0);
    }

    #[test]
    fn single_arm_plan_scales_arm_mean() {
        let d = hand_dataset();
        let r = estimate_policy_value(&d, &[1; 6]).unwrap();
        assert_eq!(r.value, 6.0 * 5.0);
        assert_eq!(r.arms[1].policy_share, 1.0);
        assert_eq!(r.control_value, 6.0 * 2.0);
        assert_eq!(r.lpa, 18.0);
    }

    #[test]
    fn mixed_plan_hand_value() {
        // Plan [1,0,0,1,1,0]: arm 0 → customers 1,2,5; matched 1,2 (total 5);
        // estimate 5·3/2 = 7.5. Arm 1 → customers 0,3,4; matched 3,4 (total
        // 10); estimate 10·3/2 = 15. E(Y) = 22.5, control 12, LPA 10.5.
        let d = hand_dataset();
        let plan = [1, 0, 0, 1, 1, 0];
        let r = estimate_policy_value(&d, &plan).unwrap();
        assert_eq!(r.arms[0].arm_total, 5.0);
        assert_eq!(r.arms[0].arm_estimate, 7.5);
        assert_eq!(r.arms[1].arm_estimate, 15.0);
        assert_eq!(r.value, 22.5);
        assert_eq!(r.per_capita_value, 3.75);
        assert_eq!(r.lpa, 10.5);
        assert_eq!(lift_purchase_amount(&d, &plan).unwrap(), 10.5);
        // Cost: matched arm-1 customers 3 (s) and 4 (no s) → 2·3/2 = 3.
        assert_eq!(r.cost_estimate, 3.0);
        assert_eq!(r.warnings.len(), 2);
    }

    #[test]
    fn control_plans_have_zero_lift_and_cost() {
        let d = hand_dataset();
        assert_eq!(lift_purchase_amount(&d, &[0; 6]).unwrap(), 0.0);
        assert_eq!(estimate_policy_cost(&d, &[0; 6]).unwrap(), 0.0);
    }

    #[test]
    fn unmatched_arm_is_reported() {
        let d = hand_dataset();
        let sub = d.subset(&[0, 1, 2]);
        match estimate_policy_value(&sub, &[0, 1, 0]).unwrap_err() {
            Error::EstimationImpossible { arm, policy_count } => assert_eq!((arm, policy_count), (1, 1)),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(estimate_policy_value(&d, &[0; 5]), Err(Error::Shape(_))));
        assert!(matches!(estimate_policy_value(&d, &[0, 0, 0, 0, 0, 9]), Err(Error::InvalidPlan { .. })));
    }

    #[test]
    fn unmatched_arms_fall_back_to_control() {
        let sub = hand_dataset().subset(&[0, 1, 2, 3]);
        let (choice, moved) = fall_back_unmatched(&sub, &[0, 1, 1, 0]).unwrap();
        // Arm 1 is matched by customer 3 only if planned there; it is not.
        assert_eq!((choice, moved), (vec![0, 0, 0, 0], 2));
        let (choice, moved) = fall_back_unmatched(&sub, &[0, 1, 1, 1]).unwrap();
        assert_eq!((choice, moved), (vec![0, 1, 1, 1], 0));
    }

    #[test]
    fn unmatched_control_borrows_a_control_customer() {
        let d = RctDataset::new(
            vec![record(0, 0, false, 1.0), record(1, 1, true, 3.0), record(2, 2, false, 2.0), record(3, 2, true, 4.0)],
            vec![Incentive::control(), Incentive::coupon("a", 1.0), Incentive::coupon("b", 2.0)],
        )
        .unwrap();
        assert!(estimate_policy_value(&d, &[2, 1, 2, 0]).is_err());
        let (choice, moved) = fall_back_unmatched(&d, &[2, 1, 2, 0]).unwrap();
        assert_eq!((choice.clone(), moved), (vec![0, 1, 2, 0], 1));
        assert!(estimate_policy_value(&d, &choice).is_ok());
    }

    #[test]
    fn estimate_ignores_customer_order() {
        let (d, _) = generate_rct(&GenConfig::standard(2000, 3)).unwrap();
        let plan: Vec<usize> = (0..d.len()).map(|i| (i * 7 + 3) % d.num_arms()).collect();
        let a = estimate_policy_value(&d, &plan).unwrap();
        let perm: Vec<usize> = (0..d.len()).rev().collect();
        let rplan: Vec<usize> = perm.iter().map(|&i| plan[i]).collect();
        let b = estimate_policy_value(&d.subset(&perm), &rplan).unwrap();
        assert!((a.value - b.value).abs() <= 1e-9 * a.value.abs());
        assert!((a.cost_estimate - b.cost_estimate).abs() <= 1e-9 * a.cost_estimate.abs().max(1.0));
    }

    #[test]
    fn folds_are_deterministic_and_balanced() {
        let a = assign_folds(103, 5, 9).unwrap();
        assert_eq!(a, assign_folds(103, 5, 9).unwrap());
        assert_ne!(a, assign_folds(103, 5, 10).unwrap());
        for f in 0..5 {
            let c = a.iter().filter(|&&x| x == f).count();
            assert!(c == 20 || c == 21);
        }
        assert!(assign_folds(10, 1, 0).is_err());
    }

    #[test]
    fn leave_one_out_folds_lack_arms() {
        let d = hand_dataset();
        let err = out_of_fold_predictions(&d, &Scorer::Random, 6, 1).unwrap_err();
        assert!(matches!(err, Error::EstimationImpossible { .. }));
    }

    #[test]
    fn sweep_endpoints() {
        let (d, truth) = generate_rct(&GenConfig::standard(6000, 4)).unwrap();
        let preds = random_predictions(d.records.iter().map(|r| r.customer_id).collect(), d.num_arms(), 10.0, 2).unwrap();
        let pts = budget_sweep(&d, &preds, &[0.0, 600.0, f64::INFINITY], Some(&truth)).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0].lpa, 0.0);
        assert_eq!(pts[0].planned_cost, 0.0);
        assert_eq!(pts[0].true_lpa, Some(0.0));
        assert!(pts[1].planned_cost <= 600.0 + 1e-9);
        // Unlimited budget: every customer takes their top predicted amount.
        let coupons = d.coupon_values();
        let argmax_cost: f64 = (0..d.len())
            .map(|i| {
                let best = (0..d.num_arms()).fold(0, |b, j| if preds.get(i, j).f_amount > preds.get(i, b).f_amount { j } else { b });
                coupons[best] * preds.get(i, best).f_direct
            })
            .sum();
        assert!((pts[2].planned_cost - argmax_cost).abs() < 1e-9 * argmax_cost);
        assert!(pts[2].planned_cost > pts[1].planned_cost);
        assert!(budget_sweep(&d, &preds, &[5.0, 1.0], None).is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let pts = vec![
            CurvePoint {
                budget: 1.0,
                cost: 0.5,
                planned_cost: 0.9,
                lpa: 2.0,
                value: 10.0,
                true_lpa: Some(1.5),
                moved_to_control: 0,
            },
            CurvePoint {
                budget: 2.0,
                cost: 1.5,
                planned_cost: 1.9,
                lpa: 3.0,
                value: 11.0,
                true_lpa: None,
                moved_to_control: 3,
            },
        ];
        let mut buf = Vec::new();
        write_curve_csv(&pts, &mut buf).unwrap();
        assert!(buf.starts_with(b"budget,cost,planned_cost,lpa,value,true_lpa,moved_to_control\n"));
        assert_eq!(read_curve_csv(&buf[..]).unwrap(), pts);
    }

    #[test]
    fn random_cv_pools_folds() {
        let (d, truth) = generate_rct(&GenConfig::standard(4000, 5)).unwrap();
        let r = cross_validated_eval(&d, &Scorer::Random, 4, 2000.0, 11, Some(&truth)).unwrap();
        assert_eq!(r.folds.len(), 4);
        assert_eq!(r.folds.iter().map(|f| f.size).sum::<usize>(), 4000);
        assert!((r.folds.iter().map(|f| f.budget).sum::<f64>() - 2000.0).abs() < 1e-9);
        assert!(r.planned_cost <= 2000.0 + 1e-6);
        assert!(r.true_lpa.is_some());
        let again = cross_validated_eval(&d, &Scorer::Random, 4, 2000.0, 11, Some(&truth)).unwrap();
        assert_eq!(r, again);
    }
}
