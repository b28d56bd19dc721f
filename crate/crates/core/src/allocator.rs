//! Budgeted incentive allocation as a multiple-choice knapsack: pick one
//! arm per customer to maximize total predicted enduring amount subject to
//! total expected redemption cost `Σ c_j · f†_ij` staying within budget.
//!
//! Three solvers share the [`AllocationProblem`] input:
//! [`brute_force_oracle`] enumerates every assignment (tests only),
//! [`solve_exact_dp`] runs the pseudo-polynomial dynamic program on costs
//! rounded to a grid, and [`solve_lagrangian`] bisects on the budget
//! multiplier and repairs the result to within one customer of the LP bound.
//!
//! Ties in every per-customer argmax go to the lowest arm index.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PredictionMatrix;
use crate::nncore::Matrix;

/// Absolute slack allowed when comparing expected cost against the budget.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

const MAX_BRUTE_FORCE_ASSIGNMENTS: u128 = 10_000_000;
const MAX_DP_CELLS: u128 = 1 << 28;
const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    /// Predicted enduring amount per (customer, arm).
    pub value: Matrix,
    /// Predicted direct purchase propensity per (customer, arm).
    pub direct_prop: Matrix,
    pub coupon_value: Vec<f64>,
    pub budget: f64,
}

impl AllocationProblem {
    pub fn new(value: Matrix, direct_prop: Matrix, coupon_value: Vec<f64>, budget: f64) -> Result<Self> {
        let p = Self {
            value,
            direct_prop,
            coupon_value,
            budget,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_predictions(preds: &PredictionMatrix, coupon_value: Vec<f64>, budget: f64) -> Result<Self> {
        Self::new(preds.amount_matrix(), preds.direct_matrix(), coupon_value, budget)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.value.shape();
        if self.direct_prop.shape() != (n, m) || self.coupon_value.len() != m {
            return Err(Error::Shape(format!(
                "value {:?}, propensity {:?}, {} coupon values",
                self.value.shape(),
                self.direct_prop.shape(),
                self.coupon_value.len()
            )));
        }
        if m == 0 {
            return Err(Error::Validation("at least one arm is required".into()));
        }
        if !self.value.is_finite() {
            return Err(Error::NonFinite("allocation values".into()));
        }
        if self.direct_prop.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation("propensities must lie in [0, 1]".into()));
        }
        if self.coupon_value.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::Validation("coupon values must be finite and nonnegative".into()));
        }
        if !self.coupon_value.contains(&0.0) {
            return Err(Error::Validation("a zero-cost arm is required for feasibility".into()));
        }
        if self.budget.is_nan() || self.budget < 0.0 {
            return Err(Error::Validation(format!("budget {} must be nonnegative", self.budget)));
        }
        Ok(())
    }

    pub fn num_customers(&self) -> usize {
        self.value.rows()
    }

    pub fn num_arms(&self) -> usize {
        self.value.cols()
    }

    /// Expected cost `c_j · f†_ij`.
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.coupon_value[j] * self.direct_prop[(i, j)]
    }

    pub fn plan_value(&self, choice: &[usize]) -> f64 {
        choice.iter().enumerate().map(|(i, &j)| self.value[(i, j)]).sum()
    }

    pub fn plan_cost(&self, choice: &[usize]) -> f64 {
        choice.iter().enumerate().map(|(i, &j)| self.cost(i, j)).sum()
    }

    pub fn plan(&self, choice: Vec<usize>) -> AllocationPlan {
        AllocationPlan {
            total_value: self.plan_value(&choice),
            total_expected_cost: self.plan_cost(&choice),
            choice,
        }
    }

    /// Cheapest arm of customer `i`, lowest index on ties.
    fn cheapest_arm(&self, i: usize) -> usize {
        argmax_by(self.num_arms(), |j| -self.cost(i, j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Chosen arm per customer.
    pub choice: Vec<usize>,
    pub total_value: f64,
    pub total_expected_cost: f64,
}

/// First index maximizing `score`.
fn argmax_by(m: usize, score: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_score = score(0);
    for j in 1..m {
        let s = score(j);
        if s > best_score {
            best = j;
            best_score = s;
        }
    }
    best
}

/// Exact optimum by enumerating all `|M|^|N|` assignments.
pub fn brute_force_oracle(problem: &AllocationProblem) -> Result<AllocationPlan> {
    problem.validate()?;
    let (n, m) = (problem.num_customers(), problem.num_arms());
    let total = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > MAX_BRUTE_FORCE_ASSIGNMENTS {
        return Err(Error::Size(format!("{m}^{n} assignments exceed {MAX_BRUTE_FORCE_ASSIGNMENTS}")));
    }
    let mut choice = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if problem.plan_cost(&choice) <= problem.budget + BUDGET_TOLERANCE {
            let v = problem.plan_value(&choice);
            if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                best = Some((v, choice.clone()));
            }
        }
        // Odometer increment, last customer fastest.
        let mut k = n;
        loop {
            if k == 0 {
                let (_, c) = best.expect("the all-cheapest assignment is feasible");
                return Ok(problem.plan(c));
            }
            k -= 1;
            choice[k] += 1;
            if choice[k] < m {
                break;
            }
            choice[k] = 0;
        }
    }
}

/// Optimal plan for the instance with costs rounded up to multiples of
/// `cost_resolution` and the budget rounded down, so the plan is also
/// feasible for the exact costs. Costs within `1e-9` of a grid point snap
/// to it.
pub fn solve_exact_dp(problem: &AllocationProblem, cost_resolution: f64) -> Result<AllocationPlan> {
    problem.validate()?;
    if !(cost_resolution > 0.0) || !cost_resolution.is_finite() {
        return Err(Error::Validation(format!("cost resolution {cost_resolution} must be positive")));
    }
    let (n, m) = (problem.num_customers(), problem.num_arms());
    let to_units = |c: f64| (c / cost_resolution - 1e-9).ceil().max(0.0);
    let budget_units_f = if problem.budget.is_infinite() {
        (0..n)
            .map(|i| (0..m).map(|j| to_units(problem.cost(i, j))).fold(0.0, f64::max))
            .sum::<f64>()
    } else {
        (problem.budget / cost_resolution + 1e-9).floor()
    };
    let cells = (n as f64 + 1.0) * (budget_units_f + 1.0);
    if !cells.is_finite() || cells as u128 > MAX_DP_CELLS {
        return Err(Error::Resource(format!(
            "dynamic program needs {cells:.0} cells at resolution {cost_resolution}"
        )));
    }
    let cap = budget_units_f as usize;
    let units: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..m).map(|j| to_units(problem.cost(i, j)) as usize).collect())
        .collect();

    // best[b] = max value of the customers so far with total units <= b.
    let mut best = vec![0.0f64; cap + 1];
    let mut next = vec![f64::NEG_INFINITY; cap + 1];
    let mut pick = vec![u16::MAX; n * (cap + 1)];
    for i in 0..n {
        next.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        let row = &mut pick[i * (cap + 1)..(i + 1) * (cap + 1)];
        for j in 0..m {
            let w = units[i][j];
            if w > cap {
                continue;
            }
            let v = problem.value[(i, j)];
            for b in w..=cap {
                let cand = best[b - w] + v;
                if cand > next[b] {
                    next[b] = cand;
                    row[b] = j as u16;
                }
            }
        }
        std::mem::swap(&mut best, &mut next);
    }
    let mut choice = vec![0usize; n];
    let mut b = cap;
    for i in (0..n).rev() {
        let j = pick[i * (cap + 1) + b] as usize;
        choice[i] = j;
        b -= units[i][j];
    }
    Ok(problem.plan(choice))
}

/// Result of [`solve_lagrangian`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianSolution {
    pub plan: AllocationPlan,
    /// Upper bound on the optimal value from weak duality.
    pub dual_bound: f64,
    /// Multiplier of the returned feasible plan.
    pub multiplier: f64,
}

fn lagrangian_choice(problem: &AllocationProblem, lambda: f64) -> Vec<usize> {
    (0..problem.num_customers())
        .map(|i| argmax_by(problem.num_arms(), |j| problem.value[(i, j)] - lambda * problem.cost(i, j)))
        .collect()
}

/// Lagrangian dual function `Σ_i max_j (v_ij - λ e_ij) + λ B`.
fn dual_value(problem: &AllocationProblem, lambda: f64) -> f64 {
    let choice = lagrangian_choice(problem, lambda);
    let inner: f64 = choice
        .iter()
        .enumerate()
        .map(|(i, &j)| problem.value[(i, j)] - lambda * problem.cost(i, j))
        .sum();
    inner + lambda * problem.budget
}

/// Bisection on the budget multiplier `λ ≥ 0`.
///
/// For each `λ` every customer takes `argmax_j (v_ij − λ e_ij)`. Bisection
/// stops once the bracket is narrower than `tolerance` relative to its
/// upper end. The feasible upper-end plan is then repaired greedily:
/// customers whose choice differs at the lower end switch over, largest
/// breakpoint first, while the budget allows. The dual bound is the
/// smallest dual value seen, including at those breakpoints, and the gap
/// to the returned plan is at most one customer's value spread.
pub fn solve_lagrangian(problem: &AllocationProblem, tolerance: f64) -> Result<LagrangianSolution> {
    problem.validate()?;
    if !(tolerance > 0.0) {
        return Err(Error::Validation(format!("tolerance {tolerance} must be positive")));
    }
    let n = problem.num_customers();
    let unconstrained = lagrangian_choice(problem, 0.0);
    if problem.plan_cost(&unconstrained) <= problem.budget + BUDGET_TOLERANCE {
        let plan = problem.plan(unconstrained);
        return Ok(LagrangianSolution {
            dual_bound: plan.total_value,
            plan,
            multiplier: 0.0,
        });
    }

    // Above this multiplier every customer prefers a cheapest arm.
    let mut hi = 1.0f64;
    for i in 0..n {
        let vmin = (0..problem.num_arms()).map(|j| problem.value[(i, j)]).fold(f64::INFINITY, f64::min);
        let cheapest = problem.cost(i, problem.cheapest_arm(i));
        for j in 0..problem.num_arms() {
            let extra = problem.cost(i, j) - cheapest;
            if extra > 0.0 {
                hi = hi.max(2.0 * (problem.value[(i, j)] - vmin) / extra);
            }
        }
    }
    let mut lo = 0.0f64;
    let mut dual_bound = dual_value(problem, hi).min(dual_value(problem, lo));
    for _ in 0..MAX_BISECTION_STEPS {
        if hi - lo <= tolerance * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let choice = lagrangian_choice(problem, mid);
        dual_bound = dual_bound.min(dual_value(problem, mid));
        if problem.plan_cost(&choice) <= problem.budget + BUDGET_TOLERANCE {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let mut choice = lagrangian_choice(problem, hi);
    let lo_choice = lagrangian_choice(problem, lo);
    let mut switches: Vec<(f64, usize)> = Vec::new();
    for i in 0..n {
        let (a, b) = (choice[i], lo_choice[i]);
        if a == b {
            continue;
        }
        let de = problem.cost(i, b) - problem.cost(i, a);
        let dv = problem.value[(i, b)] - problem.value[(i, a)];
        if de > 0.0 {
            let breakpoint = dv / de;
            if breakpoint.is_finite() && breakpoint >= 0.0 {
                dual_bound = dual_bound.min(dual_value(problem, breakpoint));
            }
            switches.push((breakpoint, i));
        }
    }
    switches.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut cost = problem.plan_cost(&choice);
    for (_, i) in switches {
        let delta = problem.cost(i, lo_choice[i]) - problem.cost(i, choice[i]);
        let gain = problem.value[(i, lo_choice[i])] - problem.value[(i, choice[i])];
        if gain > 0.0 && cost + delta <= problem.budget + BUDGET_TOLERANCE {
            choice[i] = lo_choice[i];
            cost += delta;
        }
    }
    let plan = problem.plan(choice);
    Ok(LagrangianSolution {
        dual_bound: dual_bound.max(plan.total_value),
        plan,
        multiplier: hi,
    })
}

/// Largest per-customer value spread `max_j v_ij − min_j v_ij`.
pub fn max_value_spread(problem: &AllocationProblem) -> f64 {
    (0..problem.num_customers())
        .map(|i| {
            let row = problem.value.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub total_expected_cost: f64,
    /// `budget − cost`.
    pub slack: f64,
}

/// Verifies the one-arm-per-customer and budget constraints.
pub fn check_feasible(plan: &AllocationPlan, problem: &AllocationProblem) -> Result<FeasibilityReport> {
    let n = problem.num_customers();
    if plan.choice.len() != n {
        return Err(Error::Shape(format!("plan covers {} customers, problem has {n}", plan.choice.len())));
    }
    let bad: Vec<usize> = plan
        .choice
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= problem.num_arms())
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::InvalidPlan {
            customers: bad,
            reason: "arm index out of range".into(),
        });
    }
    let cost = problem.plan_cost(&plan.choice);
    if cost > problem.budget + BUDGET_TOLERANCE {
        return Err(Error::BudgetViolation {
            cost,
            budget: problem.budget,
            excess: cost - problem.budget,
        });
    }
    Ok(FeasibilityReport {
        total_expected_cost: cost,
        slack: problem.budget - cost,
    })
}

/// Feasibility check on the 0/1 indicator form `z_ij`; a row must hold
/// exactly one 1.
pub fn check_indicator_feasible(z: &[Vec<u8>], problem: &AllocationProblem) -> Result<FeasibilityReport> {
    let mut choice = Vec::with_capacity(z.len());
    for (i, row) in z.iter().enumerate() {
        if row.len() != problem.num_arms() || row.iter().any(|&v| v > 1) {
            return Err(Error::InvalidPlan {
                customers: vec![i],
                reason: "indicator row must be 0/1 over all arms".into(),
            });
        }
        let count = row.iter().filter(|&&v| v == 1).count();
        if count != 1 {
            return Err(Error::MultipleArms { customer: i, count });
        }
        choice.push(row.iter().position(|&v| v == 1).expect("one set"));
    }
    check_feasible(&problem.plan(choice), problem)
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanRow {
    customer_id: u64,
    chosen_arm: usize,
}

/// Plan CSV: `customer_id, chosen_arm`.
pub fn write_plan_csv<W: Write>(customer_ids: &[u64], plan: &AllocationPlan, out: W) -> Result<()> {
    if customer_ids.len() != plan.choice.len() {
        return Err(Error::Shape(format!("{} ids for {} choices", customer_ids.len(), plan.choice.len())));
    }
    let mut w = csv::Writer::from_writer(out);
    for (&id, &j) in customer_ids.iter().zip(&plan.choice) {
        w.serialize(PlanRow {
            customer_id: id,
            chosen_arm: j,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a plan CSV; returns customer ids and choices in file order.
pub fn read_plan_csv<R: Read>(input: R) -> Result<(Vec<u64>, Vec<usize>)> {
    let mut rd = csv::Reader::from_reader(input);
    let mut ids = Vec::new();
    let mut choice = Vec::new();
    for row in rd.deserialize() {
        let row: PlanRow = row?;
        ids.push(row.customer_id);
        choice.push(row.chosen_arm);
    }
    Ok((ids, choice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn problem(values: &[&[f64]], props: &[&[f64]], coupons: &[f64], budget: f64) -> AllocationProblem {
        let to = |rows: &[&[f64]]| Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        AllocationProblem::new(to(values), to(props), coupons.to_vec(), budget).unwrap()
    }

    /// Instance with costs on the 0.01 grid: integer coupons, propensities
    /// in hundredths.
    fn random_problem(rng: &mut SeededRng, n: usize, m: usize) -> AllocationProblem {
        let mut coupons = vec![0.0];
        coupons.extend((1..m).map(|_| (1 + rng.below(5)) as f64));
        let value = Matrix::from_vec(n, m, (0..n * m).map(|_| rng.uniform_range(0.0, 10.0)).collect()).unwrap();
        let prop = Matrix::from_vec(n, m, (0..n * m).map(|_| (1 + rng.below(99)) as f64 / 100.0).collect()).unwrap();
        let mut p = AllocationProblem::new(value, prop, coupons, 0.0).unwrap();
        let max_cost: f64 = (0..n).map(|i| (0..m).map(|j| p.cost(i, j)).fold(0.0, f64::max)).sum();
        p.budget = (rng.uniform() * max_cost * 100.0).round() / 100.0;
        p
    }

    #[test]
    fn infinite_budget_takes_row_argmax() {
        let p = problem(&[&[1.0, 3.0, 2.0], &[5.0, 4.0, 5.0]], &[&[0.5; 3], &[0.5; 3]], &[0.0, 1.0, 2.0], f64::INFINITY);
        assert_eq!(brute_force_oracle(&p).unwrap().choice, vec![1, 0]);
        assert_eq!(solve_lagrangian(&p, 1e-9).unwrap().plan.choice, vec![1, 0]);
        assert_eq!(solve_exact_dp(&p, 0.5).unwrap().choice, vec![1, 0]);
    }

    #[test]
    fn zero_budget_forces_control() {
        let p = problem(&[&[1.0, 3.0], &[2.0, 9.0]], &[&[0.5, 0.2], &[0.5, 0.9]], &[0.0, 1.0], 0.0);
        assert_eq!(brute_force_oracle(&p).unwrap().choice, vec![0, 0]);
        assert_eq!(solve_exact_dp(&p, 0.01).unwrap().choice, vec![0, 0]);
        assert_eq!(solve_lagrangian(&p, 1e-9).unwrap().plan.choice, vec![0, 0]);
    }

    #[test]
    fn three_by_two_enumeration() {
        // Costs 1·p: customer 0 → 0.5, 1 → 0.3, 2 → 0.4; gains 2, 1.5, 1.
        // Budget 0.8 admits {0,1} (cost 0.8, gain 3.5) as the optimum over
        // the 8 assignments.
        let p = problem(
            &[&[1.0, 3.0], &[2.0, 3.5], &[4.0, 5.0]],
            &[&[0.1, 0.5], &[0.1, 0.3], &[0.1, 0.4]],
            &[0.0, 1.0],
            0.8,
        );
        let best = brute_force_oracle(&p).unwrap();
        assert_eq!(best.choice, vec![1, 1, 0]);
        assert!((best.total_value - 10.5).abs() < 1e-12);
        assert_eq!(solve_exact_dp(&p, 0.1).unwrap().choice, vec![1, 1, 0]);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let p = AllocationProblem::new(Matrix::zeros(20, 4), Matrix::zeros(20, 4), vec![0.0, 1.0, 2.0, 3.0], 1.0).unwrap();
        assert!(matches!(brute_force_oracle(&p), Err(Error::Size(_))));
    }

    #[test]
    fn dp_rejects_oversized_tables() {
        let p = AllocationProblem::new(Matrix::zeros(10, 2), Matrix::from_vec(10, 2, vec![0.5; 20]).unwrap(), vec![0.0, 1.0], 1e6).unwrap();
        assert!(matches!(solve_exact_dp(&p, 1e-6), Err(Error::Resource(_))));
    }

    #[test]
    fn dp_with_zero_costs_is_row_argmax() {
        let p = problem(&[&[1.0, 3.0], &[7.0, 4.0]], &[&[0.0, 0.0], &[0.0, 0.0]], &[0.0, 5.0], 0.0);
        assert_eq!(solve_exact_dp(&p, 0.01).unwrap().choice, vec![1, 0]);
    }

    #[test]
    fn dp_below_smallest_cost_is_control() {
        let p = problem(&[&[1.0, 3.0], &[7.0, 9.0]], &[&[0.2, 0.2], &[0.2, 0.3]], &[0.0, 5.0], 0.99);
        assert_eq!(solve_exact_dp(&p, 0.01).unwrap().choice, vec![0, 0]);
    }

    #[test]
    fn dp_matches_brute_force() {
        let mut rng = SeededRng::new(77);
        for _ in 0..100 {
            let n = 1 + rng.below(6);
            let m = 2 + rng.below(3);
            let p = random_problem(&mut rng, n, m);
            let bf = brute_force_oracle(&p).unwrap();
            let dp = solve_exact_dp(&p, 0.01).unwrap();
            assert_eq!(dp.total_value, bf.total_value);
            check_feasible(&dp, &p).unwrap();
        }
    }

    #[test]
    fn lagrangian_bounds_hold() {
        let mut rng = SeededRng::new(78);
        for _ in 0..100 {
            let n = 1 + rng.below(6);
            let m = 2 + rng.below(3);
            let p = random_problem(&mut rng, n, m);
            let bf = brute_force_oracle(&p).unwrap();
            let sol = solve_lagrangian(&p, 1e-12).unwrap();
            check_feasible(&sol.plan, &p).unwrap();
            let spread = max_value_spread(&p);
            assert!(sol.plan.total_value <= bf.total_value + 1e-9);
            assert!(bf.total_value <= sol.dual_bound + 1e-9);
            assert!(sol.dual_bound - sol.plan.total_value <= spread + 1e-9);
        }
    }

    #[test]
    fn scaling_values_keeps_the_plan() {
        let mut rng = SeededRng::new(79);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 30, 4);
            let base = solve_lagrangian(&p, 1e-12).unwrap().plan.choice;
            for k in [2.0, 0.5, 8.0] {
                let mut q = p.clone();
                q.value = q.value.map(|v| v * k);
                assert_eq!(solve_lagrangian(&q, 1e-12).unwrap().plan.choice, base);
            }
        }
    }

    #[test]
    fn unconstrained_case_has_zero_gap() {
        let p = problem(&[&[1.0, 3.0]], &[&[0.5, 0.5]], &[0.0, 1.0], 10.0);
        let s = solve_lagrangian(&p, 1e-9).unwrap();
        assert_eq!(s.plan.choice, vec![1]);
        assert_eq!(s.dual_bound, s.plan.total_value);
        assert_eq!(s.multiplier, 0.0);
    }

    #[test]
    fn feasibility_diagnostics() {
        let p = problem(&[&[1.0, 3.0], &[2.0, 4.0]], &[&[0.5, 0.5], &[0.5, 1.0]], &[0.0, 2.0], 2.0);
        let ok = check_feasible(&p.plan(vec![1, 0]), &p).unwrap();
        assert_eq!(ok.total_expected_cost, 1.0);
        assert_eq!(ok.slack, 1.0);

        let err = check_indicator_feasible(&[vec![1, 1], vec![1, 0]], &p).unwrap_err();
        assert!(matches!(err, Error::MultipleArms { customer: 0, count: 2 }));
        assert!(err.to_string().contains("customer 0"));

        // 1 + 2 = 3 > 2: over budget by one unit.
        match check_feasible(&p.plan(vec![1, 1]), &p).unwrap_err() {
            Error::BudgetViolation { excess, .. } => assert_eq!(excess, 1.0),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            check_feasible(&AllocationPlan { choice: vec![0, 5], total_value: 0.0, total_expected_cost: 0.0 }, &p),
            Err(Error::InvalidPlan { .. })
        ));
    }

    #[test]
    fn problem_requires_zero_cost_arm() {
        let m = Matrix::zeros(1, 2);
        assert!(AllocationProblem::new(m.clone(), m.clone(), vec![1.0, 2.0], 1.0).is_err());
        assert!(AllocationProblem::new(m.clone(), m, vec![0.0, 2.0], -1.0).is_err());
    }

    #[test]
    fn optimum_is_monotone_in_budget() {
        let mut rng = SeededRng::new(80);
        for _ in 0..20 {
            let mut p = random_problem(&mut rng, 5, 3);
            let mut prev = f64::NEG_INFINITY;
            for b in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
                p.budget = b;
                let v = brute_force_oracle(&p).unwrap().total_value;
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn plan_csv_round_trip() {
        let plan = AllocationPlan {
            choice: vec![2, 0, 1],
            total_value: 0.0,
            total_expected_cost: 0.0,
        };
        let mut buf = Vec::new();
        write_plan_csv(&[10, 11, 12], &plan, &mut buf).unwrap();
        assert!(buf.starts_with(b"customer_id,chosen_arm\n"));
        assert_eq!(read_plan_csv(&buf[..]).unwrap(), (vec![10, 11, 12], vec![2, 0, 1]));
    }
}
