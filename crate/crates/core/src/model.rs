//! Direct and enduring response network.
//!
//! Inputs are standardized log features concatenated with a learned
//! embedding of the incentive arm. A relu trunk feeds three single-unit
//! heads attached at increasing depth:
//!
//! | head | output | link | default depth |
//! |------|--------|------|---------------|
//! | direct propensity `f†` | probability | sigmoid | after trunk layer 2 |
//! | enduring propensity `f§` | probability | sigmoid | after trunk layer 3 |
//! | enduring amount `f‡` | currency | exp | after trunk layer 4 |
//!
//! Variants change the loss or the topology: `no_enduring_ce` zeroes the
//! enduring cross-entropy weight, `l2_amount` trains the amount head with
//! squared error through an identity link floored at [`AMOUNT_FLOOR`],
//! `direct_only` keeps only the direct head, and `two_model` gives the
//! direct head and the enduring heads disjoint trunks and embeddings.

use std::io::{Read, Write};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::datagen::{Customer, Features, RctDataset, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::losses::{hybrid_batch, AmountLoss, HeadGradients, LossWeights, TweedieIndex};
use crate::nncore::{adam_update, Activation, Activations, AdamState, Dense, DenseNet, Matrix, Mode};
use crate::rng::SeededRng;

/// Lower bound on the identity-link amount output of the `l2_amount` variant.
pub const AMOUNT_FLOOR: f64 = 1e-6;

const CHECKPOINT_FORMAT: &str = "cdee-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;
const EMBEDDING_INIT_LIMIT: f64 = 0.05;
const PREDICT_CHUNK: usize = 4096;

/// Predictions for one (customer, incentive) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionTriple {
    /// Direct purchase propensity `f†`.
    pub f_direct: f64,
    /// Enduring purchase propensity `f§`.
    pub f_enduring_prop: f64,
    /// Enduring purchase amount `f‡` (currency).
    pub f_amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoEnduringCe,
    L2Amount,
    DirectOnly,
    TwoModel,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoEnduringCe,
        Variant::L2Amount,
        Variant::DirectOnly,
        Variant::TwoModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEnduringCe => "no_enduring_ce",
            Variant::L2Amount => "l2_amount",
            Variant::DirectOnly => "direct_only",
            Variant::TwoModel => "two_model",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Trunk layer (1-based) after which each head attaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadDepths {
    pub direct: usize,
    pub enduring: usize,
    pub amount: usize,
}

impl Default for HeadDepths {
    fn default() -> Self {
        Self {
            direct: 2,
            enduring: 3,
            amount: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdeeConfig {
    pub hidden_units: Vec<usize>,
    pub incentive_count: usize,
    /// `None` selects `floor(incentive_count^0.25) + 1`.
    pub embedding_dim: Option<usize>,
    pub head_depths: HeadDepths,
    pub loss_weights: LossWeights,
    pub rho: TweedieIndex,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Epochs without validation improvement before the learning rate decays.
    pub lr_plateau_epochs: usize,
    pub lr_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    /// Share of the training records held out for early stopping.
    pub validation_fraction: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for CdeeConfig {
    fn default() -> Self {
        Self {
            hidden_units: vec![1024, 1024, 512, 16],
            incentive_count: 7,
            embedding_dim: None,
            head_depths: HeadDepths::default(),
            loss_weights: LossWeights::default(),
            rho: TweedieIndex::default(),
            learning_rate: 2e-4,
            batch_size: 1024,
            patience: 10,
            lr_plateau_epochs: 5,
            lr_decay: 0.1,
            dropout: 0.2,
            max_epochs: 200,
            validation_fraction: 0.1,
            variant: Variant::Full,
            seed: 0,
        }
    }
}

impl CdeeConfig {
    pub fn embedding_dim(&self) -> Result<usize> {
        match self.embedding_dim {
            Some(0) => Err(Error::Validation("embedding_dim must be positive".into())),
            Some(d) => Ok(d),
            None => embedding_dim(self.incentive_count),
        }
    }

    /// Loss weights after the variant's adjustments.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.loss_weights;
        match self.variant {
            Variant::NoEnduringCe => w.enduring = 0.0,
            Variant::DirectOnly => {
                w.amount = 0.0;
                w.enduring = 0.0;
                if w.direct == 0.0 {
                    w.direct = 1.0;
                }
            }
            _ => {}
        }
        w
    }

    pub fn amount_loss(&self) -> AmountLoss {
        match self.variant {
            Variant::L2Amount => AmountLoss::L2,
            _ => AmountLoss::Tweedie { rho: self.rho },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.hidden_units.is_empty() || self.hidden_units.contains(&0) {
            return bad(format!("hidden_units {:?} must be non-empty and positive", self.hidden_units));
        }
        if self.incentive_count == 0 {
            return bad("incentive_count must be at least 1".into());
        }
        self.embedding_dim()?;
        let depth = self.hidden_units.len();
        let d = self.head_depths;
        let needed: &[usize] = if self.variant == Variant::DirectOnly {
            &[d.direct]
        } else {
            &[d.direct, d.enduring, d.amount]
        };
        if needed.iter().any(|&k| k == 0 || k > depth) {
            return bad(format!("head depths {d:?} must lie in 1..={depth}"));
        }
        self.loss_weights.validate()?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} outside (0, 1]", self.lr_decay));
        }
        if self.patience == 0 || self.lr_plateau_epochs == 0 || self.max_epochs == 0 {
            return bad("patience, lr_plateau_epochs and max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction {} outside [0, 1)", self.validation_fraction));
        }
        Ok(())
    }
}

/// Width of the incentive embedding: `floor(incentive_count^0.25) + 1`.
pub fn embedding_dim(incentive_count: usize) -> Result<usize> {
    if incentive_count == 0 {
        return Err(Error::Validation("at least one incentive type is required".into()));
    }
    // Integer fourth root, immune to pow rounding at perfect powers.
    let mut r = (incentive_count as f64).powf(0.25).floor() as usize;
    while (r + 1).pow(4) <= incentive_count {
        r += 1;
    }
    while r > 0 && r.pow(4) > incentive_count {
        r -= 1;
    }
    Ok(r + 1)
}

/// `ln(1 + max(x, 0))` followed by standardization with training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureNormalizer {
    fn transform_raw(x: f64) -> f64 {
        x.max(0.0).ln_1p()
    }

    pub fn fit(features: &[Features]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Validation("cannot fit a normalizer on no rows".into()));
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; NUM_FEATURES];
        for f in features {
            for k in 0..NUM_FEATURES {
                mean[k] += Self::transform_raw(f[k]);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; NUM_FEATURES];
        for f in features {
            for k in 0..NUM_FEATURES {
                var[k] += (Self::transform_raw(f[k]) - mean[k]).powi(2);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, features: &[Features]) -> Matrix {
        let mut m = Matrix::zeros(features.len(), NUM_FEATURES);
        for (i, f) in features.iter().enumerate() {
            for k in 0..NUM_FEATURES {
                m[(i, k)] = (Self::transform_raw(f[k]) - self.mean[k]) / self.scale[k];
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Direct,
    EnduringProp,
    Amount,
}

/// Shared layers plus the incentive embedding they read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trunk {
    /// `incentive_count x embedding_dim`.
    pub embedding: Matrix,
    pub net: DenseNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub kind: HeadKind,
    pub trunk: usize,
    /// 1-based trunk layer whose output feeds this head.
    pub depth: usize,
    pub layer: Dense,
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

/// One prepared minibatch: standardized features, arms, and labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Matrix,
    pub arms: Vec<usize>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
}

struct ForwardState {
    trunk_acts: Vec<Activations>,
    head_inputs: Vec<Matrix>,
    head_outputs: Vec<Matrix>,
    triples: Vec<PredictionTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdeeModel {
    pub config: CdeeConfig,
    pub feature_dim: usize,
    pub normalizer: FeatureNormalizer,
    pub trunks: Vec<Trunk>,
    pub heads: Vec<Head>,
}

/// Builds an untrained model. The normalizer is the identity until
/// [`train`] fits it.
pub fn build_model(config: &CdeeConfig, feature_dim: usize, rng: &mut SeededRng) -> Result<CdeeModel> {
    config.validate()?;
    if feature_dim == 0 {
        return Err(Error::Validation("feature_dim must be at least 1".into()));
    }
    let emb = config.embedding_dim()?;
    let d = config.head_depths;
    let make_trunk = |depth: usize, rng: &mut SeededRng| -> Result<Trunk> {
        let data = (0..config.incentive_count * emb)
            .map(|_| rng.uniform_range(-EMBEDDING_INIT_LIMIT, EMBEDDING_INIT_LIMIT))
            .collect();
        Ok(Trunk {
            embedding: Matrix::from_vec(config.incentive_count, emb, data)?,
            net: DenseNet::init(feature_dim + emb, &config.hidden_units[..depth], Activation::Relu, config.dropout, rng)?,
        })
    };
    let amount_link = match config.variant {
        Variant::L2Amount => Activation::Identity,
        _ => Activation::Exp,
    };
    let full_depth = config.hidden_units.len();
    let width = |depth: usize| config.hidden_units[depth - 1];
    let head = |kind, trunk, depth, act, rng: &mut SeededRng| Head {
        kind,
        trunk,
        depth,
        layer: Dense::init(width(depth), 1, act, rng),
    };
    let (trunks, heads) = match config.variant {
        Variant::DirectOnly => {
            let t = make_trunk(d.direct, rng)?;
            let h = head(HeadKind::Direct, 0, d.direct, Activation::Sigmoid, rng);
            (vec![t], vec![h])
        }
        Variant::TwoModel => {
            let t0 = make_trunk(d.direct, rng)?;
            let t1 = make_trunk(full_depth, rng)?;
            let heads = vec![
                head(HeadKind::Direct, 0, d.direct, Activation::Sigmoid, rng),
                head(HeadKind::EnduringProp, 1, d.enduring, Activation::Sigmoid, rng),
                head(HeadKind::Amount, 1, d.amount, amount_link, rng),
            ];
            (vec![t0, t1], heads)
        }
        _ => {
            let t = make_trunk(full_depth, rng)?;
            let heads = vec![
                head(HeadKind::Direct, 0, d.direct, Activation::Sigmoid, rng),
                head(HeadKind::EnduringProp, 0, d.enduring, Activation::Sigmoid, rng),
                head(HeadKind::Amount, 0, d.amount, amount_link, rng),
            ];
            (vec![t], heads)
        }
    };
    Ok(CdeeModel {
        config: config.clone(),
        feature_dim,
        normalizer: FeatureNormalizer {
            mean: vec![0.0; feature_dim],
            scale: vec![1.0; feature_dim],
        },
        trunks,
        heads,
    })
}

impl CdeeModel {
    pub fn num_params(&self) -> usize {
        self.trunks
            .iter()
            .map(|t| t.embedding.data().len() + t.net.num_params())
            .sum::<usize>()
            + self.heads.iter().map(|h| h.layer.num_params()).sum::<usize>()
    }

    pub fn head(&self, kind: HeadKind) -> Option<&Head> {
        self.heads.iter().find(|h| h.kind == kind)
    }

    pub fn head_mut(&mut self, kind: HeadKind) -> Option<&mut Head> {
        self.heads.iter_mut().find(|h| h.kind == kind)
    }

    pub fn incentive_count(&self) -> usize {
        self.config.incentive_count
    }

    /// Parameters flattened: each trunk's embedding then layers, then heads.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in &self.trunks {
            out.extend_from_slice(t.embedding.data());
            t.net.write_flat(&mut out);
        }
        for h in &self.heads {
            out.extend_from_slice(h.layer.weight.data());
            out.extend_from_slice(&h.layer.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut pos = 0;
        for t in &mut self.trunks {
            let ne = t.embedding.data().len();
            t.embedding.data_mut().copy_from_slice(&flat[pos..pos + ne]);
            pos += ne;
            pos += t.net.read_flat(&flat[pos..])?;
        }
        for h in &mut self.heads {
            let nw = h.layer.weight.data().len();
            h.layer.weight.data_mut().copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            h.layer.bias[0] = flat[pos];
            pos += 1;
        }
        Ok(())
    }

    fn check_arms(&self, arms: &[usize]) -> Result<()> {
        match arms.iter().find(|&&a| a >= self.incentive_count()) {
            Some(a) => Err(Error::Validation(format!(
                "incentive index {a} out of range for {} incentives",
                self.incentive_count()
            ))),
            None => Ok(()),
        }
    }

    /// Assembles a batch from raw features using the fitted normalizer.
    pub fn make_batch(&self, features: &[Features], arms: &[usize], s: &[f64], y: &[f64]) -> Result<Batch> {
        self.check_arms(arms)?;
        Ok(Batch {
            x: self.normalizer.apply(features),
            arms: arms.to_vec(),
            s: s.to_vec(),
            y: y.to_vec(),
        })
    }

    fn forward(&self, x: &Matrix, arms: &[usize], mode: Mode, rng: &mut SeededRng) -> Result<ForwardState> {
        if x.cols() != self.feature_dim {
            return Err(Error::Shape(format!(
                "{} feature columns, model trained on {}",
                x.cols(),
                self.feature_dim
            )));
        }
        if x.rows() != arms.len() {
            return Err(Error::Shape(format!("{} rows but {} arms", x.rows(), arms.len())));
        }
        self.check_arms(arms)?;
        let mut trunk_acts = Vec::with_capacity(self.trunks.len());
        for t in &self.trunks {
            let input = x.hstack(&t.embedding.select_rows(arms))?;
            trunk_acts.push(t.net.forward_pass(&input, mode, rng)?);
        }
        let n = x.rows();
        let mut triples = vec![
            PredictionTriple {
                f_direct: 0.0,
                f_enduring_prop: 0.0,
                f_amount: 0.0,
            };
            n
        ];
        let mut head_inputs = Vec::with_capacity(self.heads.len());
        let mut head_outputs = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let input = trunk_acts[h.trunk].layer(h.depth - 1).clone();
            let out = h.layer.forward(&input)?;
            for (i, t) in triples.iter_mut().enumerate() {
                let v = out[(i, 0)];
                match h.kind {
                    HeadKind::Direct => t.f_direct = v,
                    HeadKind::EnduringProp => t.f_enduring_prop = v,
                    HeadKind::Amount => {
                        t.f_amount = if h.layer.activation == Activation::Identity {
                            v.max(AMOUNT_FLOOR)
                        } else {
                            v
                        }
                    }
                }
            }
            head_inputs.push(input);
            head_outputs.push(out);
        }
        if self.head(HeadKind::Amount).is_none() {
            // Direct-only scoring: the direct propensity stands in for the
            // enduring outputs.
            for t in &mut triples {
                t.f_enduring_prop = t.f_direct;
                t.f_amount = t.f_direct;
            }
        }
        if triples.iter().any(|t| !t.f_direct.is_finite() || !t.f_amount.is_finite()) {
            return Err(Error::NonFinite("model prediction".into()));
        }
        Ok(ForwardState {
            trunk_acts,
            head_inputs,
            head_outputs,
            triples,
        })
    }

    fn backward(&self, state: &ForwardState, arms: &[usize], grads: &[HeadGradients]) -> Result<Vec<f64>> {
        let n = arms.len();
        let mut head_flat: Vec<Vec<f64>> = Vec::with_capacity(self.heads.len());
        let mut taps: Vec<Vec<Option<Matrix>>> = self.trunks.iter().map(|t| vec![None; t.net.layers.len()]).collect();
        for (k, h) in self.heads.iter().enumerate() {
            let g = Matrix::from_vec(
                n,
                1,
                grads
                    .iter()
                    .map(|g| match h.kind {
                        HeadKind::Direct => g.direct,
                        HeadKind::EnduringProp => g.enduring_prop,
                        HeadKind::Amount => g.amount,
                    })
                    .collect(),
            )?;
            // The amount floor passes gradients straight through.
            let (gw, gb, gi) = h.layer.backward(&state.head_inputs[k], &state.head_outputs[k], &g)?;
            let mut flat = gw.data().to_vec();
            flat.extend_from_slice(&gb);
            head_flat.push(flat);
            let slot = &mut taps[h.trunk][h.depth - 1];
            match slot {
                Some(existing) => existing.add_assign(&gi)?,
                None => *slot = Some(gi),
            }
        }
        let mut out = Vec::with_capacity(self.num_params());
        for (ti, t) in self.trunks.iter().enumerate() {
            let tap_refs: Vec<Option<&Matrix>> = taps[ti].iter().map(Option::as_ref).collect();
            let g = t.net.backward_with_taps(&state.trunk_acts[ti], &tap_refs)?;
            let mut emb_grad = Matrix::zeros(t.embedding.rows(), t.embedding.cols());
            let offset = self.feature_dim;
            for (i, &a) in arms.iter().enumerate() {
                let row = &g.input.row(i)[offset..];
                for (e, v) in emb_grad.row_mut(a).iter_mut().zip(row) {
                    *e += v;
                }
            }
            out.extend_from_slice(emb_grad.data());
            out.extend(g.to_flat());
        }
        for f in head_flat {
            out.extend(f);
        }
        Ok(out)
    }

    /// Mean hybrid loss on a batch and its gradient with respect to
    /// [`CdeeModel::flat_params`].
    pub fn loss_and_gradient(&self, batch: &Batch, mode: Mode, rng: &mut SeededRng) -> Result<(f64, Vec<f64>)> {
        let state = self.forward(&batch.x, &batch.arms, mode, rng)?;
        let (loss, grads) = hybrid_batch(
            &batch.s,
            &batch.y,
            &state.triples,
            &self.config.effective_weights(),
            self.config.amount_loss(),
        )?;
        let grad = self.backward(&state, &batch.arms, &grads)?;
        Ok((loss, grad))
    }

    /// Mean hybrid loss in eval mode.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let state = self.forward(&batch.x, &batch.arms, Mode::Eval, &mut SeededRng::new(0))?;
        Ok(hybrid_batch(
            &batch.s,
            &batch.y,
            &state.triples,
            &self.config.effective_weights(),
            self.config.amount_loss(),
        )?
        .0)
    }

    /// Eval-mode predictions for already standardized features.
    pub fn predict_normalized(&self, x: &Matrix, arms: &[usize]) -> Result<Vec<PredictionTriple>> {
        let mut out = Vec::with_capacity(arms.len());
        let mut rng = SeededRng::new(0);
        let mut start = 0;
        while start < arms.len() {
            let end = (start + PREDICT_CHUNK).min(arms.len());
            let idx: Vec<usize> = (start..end).collect();
            let state = self.forward(&x.select_rows(&idx), &arms[start..end], Mode::Eval, &mut rng)?;
            out.extend(state.triples);
            start = end;
        }
        Ok(out)
    }

    pub fn predict_batch(&self, features: &[Features], arms: &[usize]) -> Result<Vec<PredictionTriple>> {
        if features.len() != arms.len() {
            return Err(Error::Shape(format!("{} feature rows but {} arms", features.len(), arms.len())));
        }
        self.check_arms(arms)?;
        self.predict_normalized(&self.normalizer.apply(features), arms)
    }

    pub fn predict(&self, features: &Features, incentive: usize) -> Result<PredictionTriple> {
        Ok(self.predict_batch(std::slice::from_ref(features), &[incentive])?[0])
    }

    /// Triples for every (customer, incentive) pair, including arms the
    /// customers never received.
    pub fn predict_matrix(&self, customers: &[Customer]) -> Result<PredictionMatrix> {
        let m = self.incentive_count();
        let features: Vec<Features> = customers.iter().map(|c| c.features).collect();
        let x = self.normalizer.apply(&features);
        let mut triples = vec![
            PredictionTriple {
                f_direct: 0.0,
                f_enduring_prop: 0.0,
                f_amount: 0.0,
            };
            customers.len() * m
        ];
        for j in 0..m {
            let col = self.predict_normalized(&x, &vec![j; customers.len()])?;
            for (i, t) in col.into_iter().enumerate() {
                triples[i * m + j] = t;
            }
        }
        PredictionMatrix::new(customers.iter().map(|c| c.id).collect(), m, triples)
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        let ckpt = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            model: self,
        };
        serde_json::to_writer(out, &ckpt)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(input)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.model.config.validate()?;
        Ok(ckpt.model)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'static str,
    version: u32,
    model: &'a CdeeModel,
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: CdeeModel,
}

/// `|N| x |M|` prediction triples, row-major by customer.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub customer_ids: Vec<u64>,
    pub num_arms: usize,
    pub triples: Vec<PredictionTriple>,
}

impl PredictionMatrix {
    pub fn new(customer_ids: Vec<u64>, num_arms: usize, triples: Vec<PredictionTriple>) -> Result<Self> {
        if triples.len() != customer_ids.len() * num_arms {
            return Err(Error::Shape(format!(
                "{} triples for {} customers x {num_arms} arms",
                triples.len(),
                customer_ids.len()
            )));
        }
        Ok(Self {
            customer_ids,
            num_arms,
            triples,
        })
    }

    pub fn num_customers(&self) -> usize {
        self.customer_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> &PredictionTriple {
        &self.triples[i * self.num_arms + j]
    }

    pub fn amount_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.num_customers(),
            self.num_arms,
            self.triples.iter().map(|t| t.f_amount).collect(),
        )
        .expect("sized by construction")
    }

    pub fn direct_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.num_customers(),
            self.num_arms,
            self.triples.iter().map(|t| t.f_direct).collect(),
        )
        .expect("sized by construction")
    }

    pub fn subset(&self, idx: &[usize]) -> PredictionMatrix {
        let mut triples = Vec::with_capacity(idx.len() * self.num_arms);
        for &i in idx {
            triples.extend_from_slice(&self.triples[i * self.num_arms..(i + 1) * self.num_arms]);
        }
        PredictionMatrix {
            customer_ids: idx.iter().map(|&i| self.customer_ids[i]).collect(),
            num_arms: self.num_arms,
            triples,
        }
    }

    /// Long-form CSV: `customer_id, arm, f_direct, f_enduring_prop, f_amount`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (i, &id) in self.customer_ids.iter().enumerate() {
            for j in 0..self.num_arms {
                let t = self.get(i, j);
                w.serialize(PredictionRow {
                    customer_id: id,
                    arm: j,
                    f_direct: t.f_direct,
                    f_enduring_prop: t.f_enduring_prop,
                    f_amount: t.f_amount,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let rows: Vec<PredictionRow> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
        let num_arms = rows.iter().map(|r| r.arm + 1).max().unwrap_or(0);
        if num_arms == 0 || rows.len() % num_arms != 0 {
            return Err(Error::Shape(format!("{} prediction rows do not form a full matrix", rows.len())));
        }
        let mut ids = Vec::with_capacity(rows.len() / num_arms);
        let mut triples = Vec::with_capacity(rows.len());
        for (k, r) in rows.iter().enumerate() {
            let j = k % num_arms;
            if r.arm != j || (j > 0 && ids.last() != Some(&r.customer_id)) {
                return Err(Error::Validation(format!("prediction row {k} out of order")));
            }
            if j == 0 {
                ids.push(r.customer_id);
            }
            triples.push(PredictionTriple {
                f_direct: r.f_direct,
                f_enduring_prop: r.f_enduring_prop,
                f_amount: r.f_amount,
            });
        }
        Self::new(ids, num_arms, triples)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    customer_id: u64,
    arm: usize,
    f_direct: f64,
    f_enduring_prop: f64,
    f_amount: f64,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

/// Output biases start at the training base rates so the first epochs are
/// not spent learning the marginal means.
fn init_output_biases(model: &mut CdeeModel, s: &[f64], y: &[f64]) {
    let n = s.len() as f64;
    let mean_s = s.iter().sum::<f64>() / n;
    let mean_pos = y.iter().filter(|&&v| v > 0.0).count() as f64 / n;
    let mean_y = y.iter().sum::<f64>() / n;
    for h in &mut model.heads {
        h.layer.bias[0] = match h.kind {
            HeadKind::Direct => logit(mean_s),
            HeadKind::EnduringProp => logit(mean_pos),
            HeadKind::Amount => match h.layer.activation {
                Activation::Exp => mean_y.max(AMOUNT_FLOOR).ln(),
                _ => mean_y,
            },
        };
    }
}

/// Trains on the observed (customer, assigned arm) pairs of `dataset`.
///
/// A `validation_fraction` share of the records (seeded shuffle) is held
/// out for early stopping; the normalizer is fitted on all of `dataset`,
/// which callers should restrict to training folds. The learning rate is
/// multiplied by `lr_decay` after `lr_plateau_epochs` epochs without a
/// validation improvement, training stops after `patience` such epochs, and
/// the best-validation parameters are returned.
pub fn train(dataset: &RctDataset, config: &CdeeConfig) -> Result<(CdeeModel, TrainingLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("cannot train on an empty dataset".into()));
    }
    if dataset.num_arms() != config.incentive_count {
        return Err(Error::Validation(format!(
            "dataset has {} arms, config expects {}",
            dataset.num_arms(),
            config.incentive_count
        )));
    }
    let mut log = TrainingLog::default();
    let n = dataset.len();
    let mut rng = SeededRng::with_stream(config.seed, 1);
    let mut model = build_model(config, NUM_FEATURES, &mut rng)?;

    let features: Vec<Features> = dataset.records.iter().map(|r| r.features).collect();
    model.normalizer = FeatureNormalizer::fit(&features)?;
    let x_all = model.normalizer.apply(&features);
    let arms: Vec<usize> = dataset.records.iter().map(|r| r.arm).collect();
    let s_all: Vec<f64> = dataset.records.iter().map(|r| r.s as u8 as f64).collect();
    let y_all: Vec<f64> = dataset.records.iter().map(|r| r.y).collect();

    let positives = s_all.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == n {
        let msg = format!("direct purchase labels are all {}", if positives == 0 { 0 } else { 1 });
        warn!("{msg}");
        log.warnings.push(msg);
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = SeededRng::with_stream(config.seed, 2);
    split_rng.shuffle(&mut order);
    let n_val = if config.validation_fraction > 0.0 && n >= 2 {
        ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let take = |idx: &[usize]| Batch {
        x: x_all.select_rows(idx),
        arms: idx.iter().map(|&i| arms[i]).collect(),
        s: idx.iter().map(|&i| s_all[i]).collect(),
        y: idx.iter().map(|&i| y_all[i]).collect(),
    };
    let train_s: Vec<f64> = train_idx.iter().map(|&i| s_all[i]).collect();
    let train_y: Vec<f64> = train_idx.iter().map(|&i| y_all[i]).collect();
    init_output_biases(&mut model, &train_s, &train_y);
    let monitor = if val_idx.is_empty() { take(&train_idx) } else { take(&val_idx) };

    let mut params = model.flat_params();
    let mut adam = AdamState::new(params.len(), config.learning_rate);
    let mut shuffle_rng = SeededRng::with_stream(config.seed, 3);
    let mut dropout_rng = SeededRng::with_stream(config.seed, 4);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut since_best = 0usize;
    let mut since_decay = 0usize;

    for epoch in 1..=config.max_epochs {
        shuffle_rng.shuffle(&mut train_idx);
        let mut total = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let batch = take(chunk);
            let (loss, grad) = model.loss_and_gradient(&batch, Mode::Train, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("training loss {loss} at epoch {epoch}")));
            }
            adam_update(&mut params, &grad, &mut adam).map_err(|e| Error::Diverged(e.to_string()))?;
            model.set_flat_params(&params)?;
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / train_idx.len() as f64;
        let val_loss = model.loss(&monitor)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        debug!("epoch {epoch}: train {train_loss:.6} validation {val_loss:.6} lr {:.2e}", adam.learning_rate);
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            validation_loss: val_loss,
            learning_rate: adam.learning_rate,
        });
        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_best >= config.patience {
                log.stopped_early = true;
                break;
            }
            if since_decay >= config.lr_plateau_epochs {
                adam.learning_rate *= config.lr_decay;
                since_decay = 0;
            }
        }
    }
    model.set_flat_params(&best.1)?;
    log.best_validation_loss = best.0;
    log.best_epoch = best.2;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_rct, GenConfig};
    use crate::nncore::{check_gradient, sample_indices};

    fn tiny_config(variant: Variant) -> CdeeConfig {
        CdeeConfig {
            hidden_units: vec![4, 4, 2, 2],
            incentive_count: 2,
            dropout: 0.0,
            variant,
            ..CdeeConfig::default()
        }
    }

    #[test]
    fn embedding_dim_values() {
        assert_eq!(embedding_dim(7).unwrap(), 2);
        assert_eq!(embedding_dim(16).unwrap(), 3);
        assert_eq!(embedding_dim(1).unwrap(), 2);
        assert_eq!(embedding_dim(15).unwrap(), 2);
        assert_eq!(embedding_dim(81).unwrap(), 4);
        assert!(embedding_dim(0).is_err());
    }

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = CdeeConfig::default();
        assert_eq!(c.hidden_units, vec![1024, 1024, 512, 16]);
        assert_eq!(c.learning_rate, 2e-4);
        assert_eq!(c.batch_size, 1024);
        assert_eq!(c.patience, 10);
        assert_eq!(c.lr_decay, 0.1);
        assert_eq!(c.dropout, 0.2);
        assert_eq!(c.rho.value(), 1.5);
        assert_eq!(c.loss_weights, LossWeights::new(10.0, 1.0, 2.0).unwrap());
        assert_eq!(c.embedding_dim().unwrap(), 2);
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        // input 3 + 2 = 5; trunk 5·4+4 + 4·4+4 + 4·2+2 + 2·2+2 = 60;
        // embedding 2·2 = 4; heads (4+1) + (2+1) + (2+1) = 11.
        let model = build_model(&tiny_config(Variant::Full), 3, &mut SeededRng::new(1)).unwrap();
        assert_eq!(model.num_params(), 75);
        assert_eq!(model.flat_params().len(), 75);
        assert_eq!(model.trunks[0].net.input_dim(), 5);
        let depths: Vec<(HeadKind, usize)> = model.heads.iter().map(|h| (h.kind, h.depth)).collect();
        assert_eq!(depths, vec![(HeadKind::Direct, 2), (HeadKind::EnduringProp, 3), (HeadKind::Amount, 4)]);
    }

    #[test]
    fn variant_topologies() {
        let d = build_model(&tiny_config(Variant::DirectOnly), 3, &mut SeededRng::new(1)).unwrap();
        assert!(d.head(HeadKind::Amount).is_none());
        assert!(d.head(HeadKind::EnduringProp).is_none());
        assert!(d.head(HeadKind::Direct).is_some());
        let t = build_model(&tiny_config(Variant::TwoModel), 3, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t.trunks.len(), 2);
        assert_eq!(t.head(HeadKind::Direct).unwrap().trunk, 0);
        assert_eq!(t.head(HeadKind::Amount).unwrap().trunk, 1);
        assert_eq!(t.head(HeadKind::EnduringProp).unwrap().trunk, 1);
        let l2 = build_model(&tiny_config(Variant::L2Amount), 3, &mut SeededRng::new(1)).unwrap();
        assert_eq!(l2.head(HeadKind::Amount).unwrap().layer.activation, Activation::Identity);
    }

    #[test]
    fn identical_seeds_identical_parameters() {
        let a = build_model(&tiny_config(Variant::Full), 3, &mut SeededRng::new(9)).unwrap();
        let b = build_model(&tiny_config(Variant::Full), 3, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = tiny_config(Variant::Full);
        c.head_depths.amount = 5;
        assert!(build_model(&c, 3, &mut SeededRng::new(0)).is_err());
        assert!(build_model(&tiny_config(Variant::Full), 0, &mut SeededRng::new(0)).is_err());
        let mut c = tiny_config(Variant::Full);
        c.incentive_count = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zeroed_heads_give_link_midpoints() {
        let mut model = build_model(&tiny_config(Variant::Full), 5, &mut SeededRng::new(2)).unwrap();
        for h in &mut model.heads {
            h.layer.weight.fill(0.0);
            h.layer.bias[0] = 0.0;
        }
        let t = model.predict(&[40.0, 3.0, 1.0, 20.0, 5.0], 1).unwrap();
        assert_eq!((t.f_direct, t.f_enduring_prop, t.f_amount), (0.5, 0.5, 1.0));
    }

    #[test]
    fn predict_ranges_and_unknown_arm() {
        let model = build_model(&tiny_config(Variant::Full), 5, &mut SeededRng::new(3)).unwrap();
        for arm in 0..2 {
            let t = model.predict(&[31.0, 0.0, 0.0, 1.0, 0.0], arm).unwrap();
            assert!(t.f_direct > 0.0 && t.f_direct < 1.0);
            assert!(t.f_enduring_prop > 0.0 && t.f_enduring_prop < 1.0);
            assert!(t.f_amount > 0.0);
        }
        assert!(matches!(model.predict(&[0.0; 5], 2), Err(Error::Validation(_))));
    }

    fn random_batch(model: &CdeeModel, n: usize, seed: u64) -> Batch {
        let mut r = SeededRng::new(seed);
        let x = Matrix::from_vec(n, model.feature_dim, (0..n * model.feature_dim).map(|_| r.uniform_range(-2.0, 2.0)).collect()).unwrap();
        let arms = (0..n).map(|_| r.below(model.incentive_count())).collect();
        let s = (0..n).map(|_| (r.uniform() < 0.4) as u8 as f64).collect();
        let y = (0..n)
            .map(|_| if r.uniform() < 0.5 { 0.0 } else { r.uniform_range(0.5, 20.0) })
            .collect();
        Batch { x, arms, s, y }
    }

    fn grad_error(model: &CdeeModel, batch: &Batch) -> f64 {
        let (_, analytic) = model.loss_and_gradient(batch, Mode::Eval, &mut SeededRng::new(0)).unwrap();
        let params = model.flat_params();
        let idx = sample_indices(params.len(), 400, 1);
        let mut scratch = model.clone();
        check_gradient(&params, &analytic, &idx, 1e-5, |p| {
            scratch.set_flat_params(p)?;
            scratch.loss(batch)
        })
        .unwrap()
    }

    /// Moves trunk biases off zero so no relu sits exactly on its kink
    /// (rows whose previous layer is all dead would otherwise do so).
    fn jitter_trunk_biases(model: &mut CdeeModel, seed: u64) {
        let mut r = SeededRng::new(seed);
        for t in &mut model.trunks {
            for l in &mut t.net.layers {
                for b in &mut l.bias {
                    *b = r.uniform_range(0.01, 0.1);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_variant() {
        for v in Variant::ALL {
            let cfg = CdeeConfig {
                hidden_units: vec![8, 6, 5, 4],
                incentive_count: 3,
                dropout: 0.0,
                variant: v,
                ..CdeeConfig::default()
            };
            let mut model = build_model(&cfg, 5, &mut SeededRng::new(21)).unwrap();
            jitter_trunk_biases(&mut model, 3);
            if v == Variant::L2Amount {
                // Keep the identity amount away from its floor, where the
                // straight-through gradient is not a derivative.
                model.head_mut(HeadKind::Amount).unwrap().layer.bias[0] = 10.0;
            }
            let batch = random_batch(&model, 16, 5);
            let err = grad_error(&model, &batch);
            assert!(err < 1e-4, "{v}: relative error {err}");
        }
    }

    #[test]
    fn variant_losses_match_reweighted_full() {
        let full = build_model(&tiny_config(Variant::Full), 5, &mut SeededRng::new(4)).unwrap();
        let batch = random_batch(&full, 12, 6);

        let mut no_ce = full.clone();
        no_ce.config.variant = Variant::NoEnduringCe;
        let mut full_w2_zero = full.clone();
        full_w2_zero.config.loss_weights.enduring = 0.0;
        assert_eq!(no_ce.loss(&batch).unwrap(), full_w2_zero.loss(&batch).unwrap());

        // Same parameters, identity amount link with L2: equals the manual
        // combination of components.
        let mut l2 = full.clone();
        l2.config.variant = Variant::L2Amount;
        l2.head_mut(HeadKind::Amount).unwrap().layer.activation = Activation::Identity;
        let preds = l2.predict_normalized(&batch.x, &batch.arms).unwrap();
        let w = LossWeights::default();
        let (expected, _) = hybrid_batch(&batch.s, &batch.y, &preds, &w, AmountLoss::L2).unwrap();
        assert_eq!(l2.loss(&batch).unwrap(), expected);
        assert!(preds.iter().all(|t| t.f_amount >= AMOUNT_FLOOR));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = build_model(&tiny_config(Variant::TwoModel), 5, &mut SeededRng::new(12)).unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let back = CdeeModel::load(&buf[..]).unwrap();
        let bits = |m: &CdeeModel| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
        assert_eq!(back, model);
        assert!(CdeeModel::load(&b"{\"format\":\"other\",\"version\":1}"[..]).is_err());
    }

    fn small_world(n: usize, seed: u64) -> RctDataset {
        let mut cfg = GenConfig::standard(n, seed);
        cfg.n_customers = n;
        generate_rct(&cfg).unwrap().0
    }

    fn fast_config(variant: Variant) -> CdeeConfig {
        CdeeConfig {
            hidden_units: vec![16, 16, 8, 4],
            incentive_count: 7,
            learning_rate: 2e-3,
            batch_size: 128,
            max_epochs: 3,
            dropout: 0.1,
            variant,
            seed: 5,
            ..CdeeConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_world(1500, 1);
        let (m1, l1) = train(&data, &fast_config(Variant::Full)).unwrap();
        let (m2, l2) = train(&data, &fast_config(Variant::Full)).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(m1, m2);
        assert_eq!(l1.epochs.len(), 3);
    }

    #[test]
    fn direct_weight_only_leaves_amount_head_untouched() {
        let data = small_world(800, 2);
        let mut cfg = fast_config(Variant::Full);
        cfg.loss_weights = LossWeights::new(0.0, 0.0, 1.0).unwrap();
        let (model, _) = train(&data, &cfg).unwrap();
        // Rebuild with the same seed to get the starting parameters.
        let start = build_model(&cfg, NUM_FEATURES, &mut SeededRng::with_stream(cfg.seed, 1)).unwrap();
        let trained = model.head(HeadKind::Amount).unwrap();
        let initial = start.head(HeadKind::Amount).unwrap();
        assert_eq!(trained.layer.weight, initial.layer.weight);
        let trained_ce = model.head(HeadKind::EnduringProp).unwrap();
        assert_eq!(trained_ce.layer.weight, start.head(HeadKind::EnduringProp).unwrap().layer.weight);
    }

    #[test]
    fn first_epoch_lowers_training_loss() {
        let data = small_world(1000, 3);
        let mut cfg = fast_config(Variant::Full);
        cfg.dropout = 0.0;
        cfg.learning_rate = 1e-3;
        cfg.max_epochs = 1;
        cfg.validation_fraction = 0.0;
        let mut rng = SeededRng::with_stream(cfg.seed, 1);
        let mut untrained = build_model(&cfg, NUM_FEATURES, &mut rng).unwrap();
        let features: Vec<Features> = data.records.iter().map(|r| r.features).collect();
        untrained.normalizer = FeatureNormalizer::fit(&features).unwrap();
        let s: Vec<f64> = data.records.iter().map(|r| r.s as u8 as f64).collect();
        let y: Vec<f64> = data.records.iter().map(|r| r.y).collect();
        let arms: Vec<usize> = data.records.iter().map(|r| r.arm).collect();
        init_output_biases(&mut untrained, &s, &y);
        let batch = untrained.make_batch(&features, &arms, &s, &y).unwrap();
        let before = untrained.loss(&batch).unwrap();
        let (trained, _) = train(&data, &cfg).unwrap();
        let after = trained.loss(&batch).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn one_class_labels_warn_but_train() {
        let mut data = small_world(300, 4);
        for r in &mut data.records {
            r.s = false;
        }
        let (_, log) = train(&data, &fast_config(Variant::Full)).unwrap();
        assert_eq!(log.warnings.len(), 1);
    }

    #[test]
    fn early_stopping_and_decay_follow_the_schedule() {
        let data = small_world(400, 5);
        let mut cfg = fast_config(Variant::Full);
        cfg.max_epochs = 60;
        cfg.learning_rate = 2e-2;
        let (_, log) = train(&data, &cfg).unwrap();
        // Replay the schedule from the logged validation losses.
        let mut best = f64::INFINITY;
        let (mut since_best, mut since_decay) = (0, 0);
        let mut lr = cfg.learning_rate;
        for e in &log.epochs {
            assert_eq!(e.learning_rate, lr);
            if e.validation_loss < best {
                best = e.validation_loss;
                since_best = 0;
                since_decay = 0;
            } else {
                since_best += 1;
                since_decay += 1;
                if since_best >= cfg.patience {
                    break;
                }
                if since_decay >= cfg.lr_plateau_epochs {
                    lr *= cfg.lr_decay;
                    since_decay = 0;
                }
            }
        }
        assert_eq!(best, log.best_validation_loss);
        if log.stopped_early {
            let last = log.epochs.last().unwrap().epoch;
            assert_eq!(last - log.best_epoch, cfg.patience);
        }
    }

    #[test]
    fn prediction_matrix_covers_every_pair() {
        let data = small_world(600, 6);
        let (model, _) = train(&data, &fast_config(Variant::Full)).unwrap();
        let customers: Vec<Customer> = data.customers().into_iter().take(3).collect();
        let m = model.predict_matrix(&customers).unwrap();
        assert_eq!(m.triples.len(), 3 * 7);
        for (i, c) in customers.iter().enumerate() {
            for j in 0..7 {
                assert_eq!(*m.get(i, j), model.predict(&c.features, j).unwrap());
            }
        }
        assert_ne!(m.get(0, 0), m.get(0, 3));
        assert_eq!(m, model.predict_matrix(&customers).unwrap());

        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(PredictionMatrix::read_csv(&buf[..]).unwrap(), m);
    }
}
