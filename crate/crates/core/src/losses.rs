//! Training losses: Tweedie deviance (compound Poisson–Gamma negative
//! log-likelihood without its normalizer), binary cross-entropy, squared
//! error, and their weighted combination over the three prediction heads.
//!
//! Each loss returns its value together with the derivative with respect
//! to the prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PredictionTriple;

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before the log.
pub const PROB_CLIP: f64 = 1e-7;

/// Tweedie index `rho`, restricted to the compound Poisson–Gamma range (1, 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TweedieIndex(f64);

impl TweedieIndex {
    pub fn new(rho: f64) -> Result<Self> {
        if rho > 1.0 && rho < 2.0 {
            Ok(Self(rho))
        } else {
            Err(Error::Validation(format!("tweedie index {rho} outside (1, 2)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for TweedieIndex {
    fn default() -> Self {
        Self(1.5)
    }
}

impl TryFrom<f64> for TweedieIndex {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TweedieIndex> for f64 {
    fn from(v: TweedieIndex) -> f64 {
        v.0
    }
}

/// Loss weights `(w1, w2, w3)` for amount, enduring propensity, and direct
/// propensity respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub amount: f64,
    pub enduring: f64,
    pub direct: f64,
}

impl LossWeights {
    pub fn new(amount: f64, enduring: f64, direct: f64) -> Result<Self> {
        let w = Self {
            amount,
            enduring,
            direct,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.amount, self.enduring, self.direct];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation(format!("loss weights {ws:?} must be finite and nonnegative")));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(Error::Validation("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            amount: 10.0,
            enduring: 1.0,
            direct: 2.0,
        }
    }
}

/// Regression loss applied to the amount head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AmountLoss {
    Tweedie { rho: TweedieIndex },
    L2,
}

/// `-y·ŷ^(1-ρ)/(1-ρ) + ŷ^(2-ρ)/(2-ρ)` and its derivative `ŷ^(-ρ)·(ŷ - y)`.
pub fn tweedie_loss(y: f64, y_hat: f64, rho: TweedieIndex) -> Result<(f64, f64)> {
    if !(y >= 0.0) || !y.is_finite() {
        return Err(Error::Validation(format!("amount {y} must be finite and nonnegative")));
    }
    if !(y_hat > 0.0) || !y_hat.is_finite() {
        return Err(Error::Domain(format!("tweedie loss needs a positive prediction, got {y_hat}")));
    }
    let rho = rho.value();
    let a = 1.0 - rho;
    let b = 2.0 - rho;
    let value = -y * y_hat.powf(a) / a + y_hat.powf(b) / b;
    let grad = y_hat.powf(-rho) * (y_hat - y);
    Ok((value, grad))
}

/// Binary cross-entropy on a clipped probability. The derivative is that of
/// the clipped expression, so it vanishes where clipping is active.
pub fn cross_entropy_loss(label: f64, p_hat: f64) -> Result<(f64, f64)> {
    if label != 0.0 && label != 1.0 {
        return Err(Error::Validation(format!("label {label} is not 0 or 1")));
    }
    if p_hat.is_nan() {
        return Err(Error::NonFinite("probability is NaN".into()));
    }
    let p = p_hat.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    let value = -label * p.ln() - (1.0 - label) * (1.0 - p).ln();
    let grad = if p != p_hat {
        0.0
    } else {
        -label / p + (1.0 - label) / (1.0 - p)
    };
    Ok((value, grad))
}

/// `(y - ŷ)²` and its derivative `2(ŷ - y)`.
pub fn l2_loss(y: f64, y_hat: f64) -> (f64, f64) {
    let d = y_hat - y;
    (d * d, 2.0 * d)
}

/// Mean squared error over paired slices.
pub fn l2_batch(y: &[f64], y_hat: &[f64]) -> f64 {
    assert_eq!(y.len(), y_hat.len());
    y.iter().zip(y_hat).map(|(&a, &b)| l2_loss(a, b).0).sum::<f64>() / y.len() as f64
}

/// Gradients of a hybrid loss with respect to each head's output.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadGradients {
    pub direct: f64,
    pub enduring_prop: f64,
    pub amount: f64,
}

/// `w1·L_amount(y; f‡) + w2·CE(1{y>0}; f§) + w3·CE(s; f†)` for one example.
/// Components with zero weight are skipped entirely, so their head outputs
/// are never inspected.
pub fn hybrid_loss(
    s: f64,
    y: f64,
    triple: &PredictionTriple,
    weights: &LossWeights,
    amount_loss: AmountLoss,
) -> Result<(f64, HeadGradients)> {
    let mut value = 0.0;
    let mut grads = HeadGradients::default();
    if weights.amount != 0.0 {
        let (v, g) = match amount_loss {
            AmountLoss::Tweedie { rho } => tweedie_loss(y, triple.f_amount, rho)?,
            AmountLoss::L2 => {
                if !(y >= 0.0) {
                    return Err(Error::Validation(format!("amount {y} must be nonnegative")));
                }
                l2_loss(y, triple.f_amount)
            }
        };
        value += weights.amount * v;
        grads.amount = weights.amount * g;
    }
    if weights.enduring != 0.0 {
        let label = if y > 0.0 { 1.0 } else { 0.0 };
        let (v, g) = cross_entropy_loss(label, triple.f_enduring_prop)?;
        value += weights.enduring * v;
        grads.enduring_prop = weights.enduring * g;
    }
    if weights.direct != 0.0 {
        let (v, g) = cross_entropy_loss(s, triple.f_direct)?;
        value += weights.direct * v;
        grads.direct = weights.direct * g;
    }
    Ok((value, grads))
}

/// Batch mean of [`hybrid_loss`]; per-example gradients are scaled by `1/n`
/// so they are gradients of the mean.
pub fn hybrid_batch(
    s: &[f64],
    y: &[f64],
    triples: &[PredictionTriple],
    weights: &LossWeights,
    amount_loss: AmountLoss,
) -> Result<(f64, Vec<HeadGradients>)> {
    let n = triples.len();
    if s.len() != n || y.len() != n {
        return Err(Error::Shape(format!(
            "{} labels, {} amounts, {n} predictions",
            s.len(),
            y.len()
        )));
    }
    if n == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let (v, g) = hybrid_loss(s[i], y[i], &triples[i], weights, amount_loss)?;
        total += v;
        grads.push(HeadGradients {
            direct: g.direct * inv,
            enduring_prop: g.enduring_prop * inv,
            amount: g.amount * inv,
        });
    }
    Ok((total * inv, grads))
}
