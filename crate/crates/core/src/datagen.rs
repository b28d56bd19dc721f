//! Synthetic randomized-control-trial generator with exported ground truth.
//!
//! A generated world has `n_customers` customers described by five
//! transaction features (recency in days, long/short-window purchase
//! counts, long/short-window spend). Each customer is assigned one arm
//! independently of everything else, then reveals
//!
//! * `s`: whether they purchased during the promotion, `s ~ Bernoulli(p)`;
//! * `y`: the enduring amount, `y = y_promo + y_post`, where `y_promo` is a
//!   Gamma-distributed promotion-period spend present iff `s = 1` and
//!   `y_post` is a compound Poisson–Gamma draw with mean `mu_post`.
//!
//! `p` and `mu_post` come from [`ResponseSpec`]: a logistic and an
//! exponential link over a linear form in standardized log features, the
//! arm's coupon value, a per-arm offset, and per-arm feature interactions.
//! The true enduring mean is `mu = mu_post + p * promo_spend_mean`.
//!
//! Every customer draws from its own ChaCha stream keyed by
//! `(seed, customer_id)`, so generation is order-independent.

use std::io::{Read, Write};

use rand_distr::{Distribution, Gamma, Geometric, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::TweedieIndex;
use crate::nncore::Matrix;
use crate::rng::SeededRng;

pub const NUM_FEATURES: usize = 5;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["recency", "freq_long", "freq_short", "money_long", "money_short"];

const FEATURE_STREAM_TAG: u64 = 0xfea7;
const TRIAL_STREAM_TAG: u64 = 0x7e1a1;

pub type Features = [f64; NUM_FEATURES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incentive {
    pub name: String,
    /// Coupon value paid on redemption (currency).
    pub coupon_value: f64,
    /// Marks the zero-incentive (control) arm.
    #[serde(default)]
    pub is_control: bool,
}

impl Incentive {
    pub fn control() -> Self {
        Self {
            name: "control".into(),
            coupon_value: 0.0,
            is_control: true,
        }
    }

    pub fn coupon(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            coupon_value: value,
            is_control: false,
        }
    }
}

/// Checks arm definitions and returns the index of the control arm.
pub fn validate_incentives(incentives: &[Incentive]) -> Result<usize> {
    if incentives.is_empty() {
        return Err(Error::Validation("at least one incentive arm is required".into()));
    }
    for (j, inc) in incentives.iter().enumerate() {
        if !inc.coupon_value.is_finite() || inc.coupon_value < 0.0 {
            return Err(Error::Validation(format!(
                "arm {j} ({}) has invalid coupon value {}",
                inc.name, inc.coupon_value
            )));
        }
    }
    let controls: Vec<usize> = incentives
        .iter()
        .enumerate()
        .filter(|(_, i)| i.is_control)
        .map(|(j, _)| j)
        .collect();
    match controls.as_slice() {
        [j] if incentives[*j].coupon_value == 0.0 => Ok(*j),
        [j] => Err(Error::Validation(format!(
            "control arm {j} must have coupon value 0, has {}",
            incentives[*j].coupon_value
        ))),
        _ => Err(Error::Validation(format!(
            "exactly one zero-incentive arm required, found {}",
            controls.len()
        ))),
    }
}

/// Parameters of the feature distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    /// Smallest recency (days); targets are lapsed customers.
    pub recency_min: f64,
    /// Mean of the geometric excess over `recency_min` (days).
    pub recency_mean_excess: f64,
    /// Shape of the Gamma(k, 1/k) activity multiplier shared by both
    /// frequency windows; frequencies are then negative binomial.
    pub activity_shape: f64,
    pub freq_long_mean: f64,
    pub freq_short_mean: f64,
    /// Log of the typical order value (currency).
    pub log_order_value: f64,
    pub money_sigma: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            recency_min: 30.0,
            recency_mean_excess: 60.0,
            activity_shape: 1.5,
            freq_long_mean: 12.0,
            freq_short_mean: 3.0,
            log_order_value: 2.5,
            money_sigma: 0.8,
        }
    }
}

/// Linear predictor of one response: intercept, feature slopes, coupon
/// slope, per-arm offsets, and per-arm feature interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearResponse {
    pub intercept: f64,
    pub coef: Features,
    pub coupon_slope: f64,
    pub arm_offset: Vec<f64>,
    pub interaction: Vec<Features>,
}

impl LinearResponse {
    pub fn flat(intercept: f64, coef: Features, arms: usize) -> Self {
        Self {
            intercept,
            coef,
            coupon_slope: 0.0,
            arm_offset: vec![0.0; arms],
            interaction: vec![[0.0; NUM_FEATURES]; arms],
        }
    }

    pub fn eval(&self, z: &Features, arm: usize, coupon_value: f64) -> f64 {
        let mut eta = self.intercept + self.coupon_slope * coupon_value + self.arm_offset[arm];
        for k in 0..NUM_FEATURES {
            eta += (self.coef[k] + self.interaction[arm][k]) * z[k];
        }
        eta
    }

    fn validate(&self, arms: usize, what: &str) -> Result<()> {
        if self.arm_offset.len() != arms || self.interaction.len() != arms {
            return Err(Error::Validation(format!(
                "{what} response has {} offsets and {} interaction rows for {arms} arms",
                self.arm_offset.len(),
                self.interaction.len()
            )));
        }
        let all = std::iter::once(self.intercept)
            .chain(self.coef.iter().copied())
            .chain(std::iter::once(self.coupon_slope))
            .chain(self.arm_offset.iter().copied())
            .chain(self.interaction.iter().flatten().copied());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{what} response has non-finite coefficients")));
        }
        Ok(())
    }
}

/// True response surface of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSpec {
    /// Standardization `z = (ln(1 + raw) - center) / scale`, per feature.
    pub feature_center: Features,
    pub feature_scale: Features,
    /// Logit of the direct purchase probability.
    pub direct: LinearResponse,
    /// Log of the mean post-promotion amount.
    pub enduring: LinearResponse,
    /// Mean spend of a promotion-period purchase (currency).
    pub promo_spend_mean: f64,
    /// Gamma shape of the promotion-period spend.
    pub promo_spend_shape: f64,
}

/// True response of one customer to one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub p_direct: f64,
    pub mu_post: f64,
    /// Total expected enduring amount, `mu_post + p_direct * promo_spend_mean`.
    pub mu_enduring: f64,
}

impl ResponseSpec {
    pub fn standardize(&self, raw: &Features) -> Features {
        let mut z = [0.0; NUM_FEATURES];
        for k in 0..NUM_FEATURES {
            z[k] = ((1.0 + raw[k].max(0.0)).ln() - self.feature_center[k]) / self.feature_scale[k];
        }
        z
    }

    fn validate(&self, arms: usize) -> Result<()> {
        self.direct.validate(arms, "direct")?;
        self.enduring.validate(arms, "enduring")?;
        if self.feature_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Validation("feature scales must be positive".into()));
        }
        if !(self.promo_spend_mean >= 0.0) || !(self.promo_spend_shape > 0.0) {
            return Err(Error::Validation("promotion spend mean must be >= 0 and shape > 0".into()));
        }
        Ok(())
    }
}

/// Response of a customer with raw `features` to `arm`.
pub fn true_response(features: &Features, arm: usize, coupon_value: f64, spec: &ResponseSpec) -> Response {
    let z = spec.standardize(features);
    let p_direct = crate::nncore::sigmoid(spec.direct.eval(&z, arm, coupon_value));
    let mu_post = spec.enduring.eval(&z, arm, coupon_value).exp();
    Response {
        p_direct,
        mu_post,
        mu_enduring: mu_post + p_direct * spec.promo_spend_mean,
    }
}

/// Draws from the compound Poisson–Gamma distribution with mean `mu`,
/// dispersion `phi`, and index `rho`: `N ~ Poisson(λ)`, then the sum of `N`
/// independent `Gamma(α, θ)` variates with
/// `λ = mu^(2-ρ) / (φ(2-ρ))`, `α = (2-ρ)/(ρ-1)`, `θ = φ(ρ-1)mu^(ρ-1)`.
/// Returns exactly `0.0` when `N = 0`.
pub fn sample_cpg(mu: f64, phi: f64, rho: f64, rng: &mut SeededRng) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Validation(format!("mean {mu} must be positive")));
    }
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::Validation(format!("dispersion {phi} must be positive")));
    }
    if !(rho > 1.0 && rho < 2.0) {
        return Err(Error::Validation(format!("index {rho} outside (1, 2)")));
    }
    let (lambda, alpha, theta) = cpg_params(mu, phi, rho);
    let n = Poisson::new(lambda)
        .map_err(|e| Error::Validation(format!("poisson rate {lambda}: {e}")))?
        .sample(rng.inner());
    if n == 0.0 {
        return Ok(0.0);
    }
    // A sum of n iid Gamma(α, θ) is Gamma(nα, θ).
    let g = Gamma::new(n * alpha, theta).map_err(|e| Error::Validation(format!("gamma({}, {theta}): {e}", n * alpha)))?;
    Ok(g.sample(rng.inner()))
}

/// `(λ, α, θ)` of the compound Poisson–Gamma representation.
pub fn cpg_params(mu: f64, phi: f64, rho: f64) -> (f64, f64, f64) {
    let lambda = mu.powf(2.0 - rho) / (phi * (2.0 - rho));
    let alpha = (2.0 - rho) / (rho - 1.0);
    let theta = phi * (rho - 1.0) * mu.powf(rho - 1.0);
    (lambda, alpha, theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_customers: usize,
    pub incentives: Vec<Incentive>,
    pub assignment_probs: Vec<f64>,
    pub phi: f64,
    pub rho: TweedieIndex,
    pub seed: u64,
    #[serde(default)]
    pub features: FeatureSpec,
    pub response: ResponseSpec,
}

impl GenConfig {
    pub fn validate(&self) -> Result<usize> {
        let control = validate_incentives(&self.incentives)?;
        let arms = self.incentives.len();
        if self.n_customers == 0 {
            return Err(Error::Validation("n_customers must be positive".into()));
        }
        if self.assignment_probs.len() != arms {
            return Err(Error::Validation(format!(
                "{} assignment probabilities for {arms} arms",
                self.assignment_probs.len()
            )));
        }
        if self.assignment_probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Validation("assignment probabilities must be nonnegative".into()));
        }
        let total: f64 = self.assignment_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("assignment probabilities sum to {total}, not 1")));
        }
        if !(self.phi > 0.0) || !self.phi.is_finite() {
            return Err(Error::Validation(format!("dispersion phi {} must be positive", self.phi)));
        }
        let f = &self.features;
        if !(f.recency_mean_excess > 0.0 && f.activity_shape > 0.0 && f.freq_long_mean > 0.0 && f.freq_short_mean > 0.0 && f.money_sigma > 0.0) {
            return Err(Error::Validation("feature distribution parameters must be positive".into()));
        }
        self.response.validate(arms)?;
        if self.response.promo_spend_mean <= 0.0 {
            return Err(Error::Validation("promo_spend_mean must be positive so that s = 1 implies spend".into()));
        }
        Ok(control)
    }

    /// Seven arms (control plus three discount and three rebate coupons)
    /// with uniform assignment.
    ///
    /// Discounts lift the promotion-period purchase strongly but pull
    /// purchases forward, depressing post-promotion spend for frequent
    /// buyers. Rebates lift the direct response less and re-engage lapsed
    /// customers after the promotion.
    pub fn standard(n_customers: usize, seed: u64) -> Self {
        let incentives = vec![
            Incentive::control(),
            Incentive::coupon("discount_2", 2.0),
            Incentive::coupon("discount_4", 4.0),
            Incentive::coupon("discount_6", 6.0),
            Incentive::coupon("rebate_2", 2.0),
            Incentive::coupon("rebate_4", 4.0),
            Incentive::coupon("rebate_6", 6.0),
        ];
        let arms = incentives.len();
        let mut direct = LinearResponse::flat(-1.3, [-0.9, 0.35, 0.75, 0.25, 0.2], arms);
        direct.coupon_slope = 0.12;
        let mut enduring = LinearResponse::flat(2.9, [-0.3, 0.2, 0.2, 0.45, 0.2], arms);
        for (j, inc) in incentives.iter().enumerate() {
            let c = inc.coupon_value;
            if inc.name.starts_with("discount") {
                direct.arm_offset[j] = 0.3;
                direct.interaction[j][3] = -0.05 * c;
                enduring.arm_offset[j] = -0.02 * c;
                enduring.interaction[j][2] = -0.05 * c;
            } else if inc.name.starts_with("rebate") {
                direct.arm_offset[j] = -0.1;
                enduring.arm_offset[j] = 0.02 * c;
                enduring.interaction[j][0] = 0.04 * c;
            }
        }
        Self {
            n_customers,
            assignment_probs: vec![1.0 / arms as f64; arms],
            incentives,
            phi: 2.0,
            rho: TweedieIndex::default(),
            seed,
            features: FeatureSpec::default(),
            response: ResponseSpec {
                feature_center: DEFAULT_FEATURE_CENTER,
                feature_scale: DEFAULT_FEATURE_SCALE,
                direct,
                enduring,
                promo_spend_mean: 8.0,
                promo_spend_shape: 2.0,
            },
        }
    }

    /// Like [`GenConfig::standard`] but with direct and enduring responses
    /// pulling in opposite directions: the arms that lift the direct
    /// purchase most lower the enduring amount.
    pub fn decorrelated(n_customers: usize, seed: u64) -> Self {
        let mut cfg = Self::standard(n_customers, seed);
        cfg.response.promo_spend_mean = 2.0;
        for (j, inc) in cfg.incentives.iter().enumerate() {
            let c = inc.coupon_value;
            if inc.name.starts_with("discount") {
                cfg.response.direct.arm_offset[j] = 0.6;
                cfg.response.enduring.arm_offset[j] = -0.05 * c;
            } else if inc.name.starts_with("rebate") {
                cfg.response.direct.arm_offset[j] = -0.4;
                cfg.response.enduring.arm_offset[j] = 0.03 * c;
            }
        }
        cfg
    }
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::standard(100_000, 2022)
    }
}

/// Population means and standard deviations of `ln(1 + raw)` under the
/// default [`FeatureSpec`] (estimated from 10^6 customers).
pub const DEFAULT_FEATURE_CENTER: Features = [4.34, 2.23, 1.12, 4.75, 3.67];
pub const DEFAULT_FEATURE_SCALE: Features = [0.57, 0.88, 0.74, 1.17, 1.04];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: u64,
    pub features: Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctRecord {
    pub customer_id: u64,
    pub features: Features,
    /// Assigned arm index.
    pub arm: usize,
    /// Direct (promotion-period) purchase flag.
    pub s: bool,
    /// Enduring purchase amount (currency).
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RctDataset {
    pub records: Vec<RctRecord>,
    pub incentives: Vec<Incentive>,
}

impl RctDataset {
    pub fn new(records: Vec<RctRecord>, incentives: Vec<Incentive>) -> Result<Self> {
        validate_incentives(&incentives)?;
        for r in &records {
            if r.arm >= incentives.len() {
                return Err(Error::Validation(format!(
                    "customer {} assigned to unknown arm {}",
                    r.customer_id, r.arm
                )));
            }
            if !(r.y >= 0.0) || !r.y.is_finite() {
                return Err(Error::Validation(format!("customer {} has invalid amount {}", r.customer_id, r.y)));
            }
        }
        Ok(Self { records, incentives })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_arms(&self) -> usize {
        self.incentives.len()
    }

    pub fn control_arm(&self) -> usize {
        validate_incentives(&self.incentives).expect("validated on construction")
    }

    pub fn coupon_values(&self) -> Vec<f64> {
        self.incentives.iter().map(|i| i.coupon_value).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> RctDataset {
        RctDataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            incentives: self.incentives.clone(),
        }
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_arms()];
        for r in &self.records {
            c[r.arm] += 1;
        }
        c
    }

    pub fn feature_matrix(&self) -> Matrix {
        let data = self.records.iter().flat_map(|r| r.features).collect();
        Matrix::from_vec(self.len(), NUM_FEATURES, data).expect("sized by construction")
    }

    pub fn customers(&self) -> Vec<Customer> {
        self.records
            .iter()
            .map(|r| Customer {
                id: r.customer_id,
                features: r.features,
            })
            .collect()
    }
}

/// True `p_direct` and `mu_enduring` for every (customer, arm) pair, rows in
/// dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub customer_ids: Vec<u64>,
    pub p_direct: Matrix,
    pub mu_enduring: Matrix,
}

impl GroundTruth {
    pub fn compute(customers: &[Customer], incentives: &[Incentive], spec: &ResponseSpec) -> Self {
        let (n, m) = (customers.len(), incentives.len());
        let mut p = Matrix::zeros(n, m);
        let mut mu = Matrix::zeros(n, m);
        for (i, c) in customers.iter().enumerate() {
            for (j, inc) in incentives.iter().enumerate() {
                let r = true_response(&c.features, j, inc.coupon_value, spec);
                p[(i, j)] = r.p_direct;
                mu[(i, j)] = r.mu_enduring;
            }
        }
        Self {
            customer_ids: customers.iter().map(|c| c.id).collect(),
            p_direct: p,
            mu_enduring: mu,
        }
    }

    /// Exact expected enduring amount of assigning `choice[i]` to row `i`.
    pub fn policy_value(&self, choice: &[usize]) -> f64 {
        choice.iter().enumerate().map(|(i, &j)| self.mu_enduring[(i, j)]).sum()
    }

    /// Exact lift of `choice` over sending everyone to `control`.
    pub fn policy_lift(&self, choice: &[usize], control: usize) -> f64 {
        choice
            .iter()
            .enumerate()
            .map(|(i, &j)| self.mu_enduring[(i, j)] - self.mu_enduring[(i, control)])
            .sum()
    }

    /// Exact expected redemption cost `Σ c_j p_ij` of `choice`.
    pub fn policy_cost(&self, choice: &[usize], coupon_values: &[f64]) -> f64 {
        choice
            .iter()
            .enumerate()
            .map(|(i, &j)| coupon_values[j] * self.p_direct[(i, j)])
            .sum()
    }

    pub fn subset(&self, idx: &[usize]) -> GroundTruth {
        GroundTruth {
            customer_ids: idx.iter().map(|&i| self.customer_ids[i]).collect(),
            p_direct: self.p_direct.select_rows(idx),
            mu_enduring: self.mu_enduring.select_rows(idx),
        }
    }
}

fn sample_features(spec: &FeatureSpec, rng: &mut SeededRng) -> Features {
    let activity = Gamma::new(spec.activity_shape, 1.0 / spec.activity_shape)
        .expect("validated shape")
        .sample(rng.inner());
    let recency_p = 1.0 / (1.0 + spec.recency_mean_excess);
    let recency = spec.recency_min + Geometric::new(recency_p).expect("p in (0,1]").sample(rng.inner()) as f64;
    let freq = |mean: f64, rng: &mut SeededRng| {
        let rate = (mean * activity).max(1e-12);
        Poisson::new(rate).expect("positive rate").sample(rng.inner())
    };
    let freq_long = freq(spec.freq_long_mean, rng);
    let freq_short = freq(spec.freq_short_mean, rng);
    let money = |count: f64, rng: &mut SeededRng| {
        LogNormal::new(spec.log_order_value + count.ln_1p(), spec.money_sigma)
            .expect("positive sigma")
            .sample(rng.inner())
    };
    let money_long = money(freq_long, rng);
    let money_short = money(freq_short, rng);
    [recency, freq_long, freq_short, money_long, money_short]
}

/// Customers `0..n_customers` with features drawn from `config.features`.
pub fn sample_customers(config: &GenConfig) -> Vec<Customer> {
    let seed = SeededRng::derive_seed(config.seed, FEATURE_STREAM_TAG);
    (0..config.n_customers as u64)
        .map(|id| {
            let mut rng = SeededRng::with_stream(seed, id);
            Customer {
                id,
                features: sample_features(&config.features, &mut rng),
            }
        })
        .collect()
}

fn sample_arm(probs: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left u above the cumulative sum; take the last positive arm.
    probs.iter().rposition(|&p| p > 0.0).expect("probabilities sum to 1")
}

/// Randomly assigns arms to the given customers and draws their outcomes.
/// The trial's randomness is keyed by `trial_seed`, independent of how the
/// customers were produced.
pub fn run_trial(customers: &[Customer], config: &GenConfig, trial_seed: u64) -> Result<(RctDataset, GroundTruth)> {
    config.validate()?;
    let spec = &config.response;
    let rho = config.rho.value();
    let seed = SeededRng::derive_seed(trial_seed, TRIAL_STREAM_TAG);
    let promo = Gamma::new(spec.promo_spend_shape, spec.promo_spend_mean / spec.promo_spend_shape)
        .map_err(|e| Error::Validation(format!("promotion spend: {e}")))?;
    let mut records = Vec::with_capacity(customers.len());
    for c in customers {
        let mut rng = SeededRng::with_stream(seed, c.id);
        let arm = sample_arm(&config.assignment_probs, &mut rng);
        let resp = true_response(&c.features, arm, config.incentives[arm].coupon_value, spec);
        let s = rng.uniform() < resp.p_direct;
        let y_promo = if s { promo.sample(rng.inner()) } else { 0.0 };
        let y_post = sample_cpg(resp.mu_post, config.phi, rho, &mut rng)?;
        records.push(RctRecord {
            customer_id: c.id,
            features: c.features,
            arm,
            s,
            y: y_promo + y_post,
        });
    }
    let truth = GroundTruth::compute(customers, &config.incentives, spec);
    Ok((RctDataset::new(records, config.incentives.clone())?, truth))
}

/// Customers, randomized assignment, and outcomes from `config.seed`.
pub fn generate_rct(config: &GenConfig) -> Result<(RctDataset, GroundTruth)> {
    config.validate()?;
    let customers = sample_customers(config);
    run_trial(&customers, config, config.seed)
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRow {
    customer_id: u64,
    recency: f64,
    freq_long: f64,
    freq_short: f64,
    money_long: f64,
    money_short: f64,
    arm: usize,
    s: u8,
    y: f64,
}

/// Dataset CSV: `customer_id, recency, freq_long, freq_short, money_long,
/// money_short, arm, s, y`. Recency is in days, frequencies are counts,
/// money and `y` are currency, `s` is 0/1.
pub fn write_dataset_csv<W: Write>(dataset: &RctDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &dataset.records {
        let [recency, freq_long, freq_short, money_long, money_short] = r.features;
        w.serialize(DatasetRow {
            customer_id: r.customer_id,
            recency,
            freq_long,
            freq_short,
            money_long,
            money_short,
            arm: r.arm,
            s: r.s as u8,
            y: r.y,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R, incentives: Vec<Incentive>) -> Result<RctDataset> {
    let mut rd = csv::Reader::from_reader(input);
    let mut records = Vec::new();
    for row in rd.deserialize() {
        let row: DatasetRow = row?;
        if row.s > 1 {
            return Err(Error::Validation(format!("customer {}: s = {} is not 0 or 1", row.customer_id, row.s)));
        }
        records.push(RctRecord {
            customer_id: row.customer_id,
            features: [row.recency, row.freq_long, row.freq_short, row.money_long, row.money_short],
            arm: row.arm,
            s: row.s == 1,
            y: row.y,
        });
    }
    RctDataset::new(records, incentives)
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    customer_id: u64,
    arm: usize,
    p_true: f64,
    mu_true: f64,
}

/// Ground-truth CSV in long form: `customer_id, arm, p_true, mu_true`.
pub fn write_ground_truth_csv<W: Write>(truth: &GroundTruth, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, &id) in truth.customer_ids.iter().enumerate() {
        for j in 0..truth.p_direct.cols() {
            w.serialize(TruthRow {
                customer_id: id,
                arm: j,
                p_true: truth.p_direct[(i, j)],
                mu_true: truth.mu_enduring[(i, j)],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth_csv<R: Read>(input: R, num_arms: usize) -> Result<GroundTruth> {
    let mut rd = csv::Reader::from_reader(input);
    let rows: Vec<TruthRow> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
    if num_arms == 0 || rows.len() % num_arms != 0 {
        return Err(Error::Shape(format!("{} ground-truth rows for {num_arms} arms", rows.len())));
    }
    let n = rows.len() / num_arms;
    let mut ids = Vec::with_capacity(n);
    let mut p = Matrix::zeros(n, num_arms);
    let mut mu = Matrix::zeros(n, num_arms);
    for (k, row) in rows.iter().enumerate() {
        let (i, j) = (k / num_arms, k % num_arms);
        if row.arm != j || (j > 0 && row.customer_id != ids[i]) {
            return Err(Error::Validation(format!("ground-truth row {k} out of order")));
        }
        if j == 0 {
            ids.push(row.customer_id);
        }
        p[(i, j)] = row.p_true;
        mu[(i, j)] = row.mu_true;
    }
    Ok(GroundTruth {
        customer_ids: ids,
        p_direct: p,
        mu_enduring: mu,
    })
}
