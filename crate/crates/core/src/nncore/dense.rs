use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Largest pre-activation fed to `exp`; keeps outputs finite.
pub const EXP_INPUT_CAP: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Exp,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Exp => x.min(EXP_INPUT_CAP).exp(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Exp => y,
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One affine layer followed by an elementwise activation.
/// `weight` is `in_dim x out_dim`, so a batch propagates as `X·W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::Shape(format!(
                "bias of length {} for a layer with {} outputs",
                bias.len(),
                weight.cols()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Fan-in variance scaling with a uniform distribution:
    /// `U(-l, l)` with `l = sqrt(3 * gain / fan_in)`, gain 2 for relu and
    /// 1 otherwise. Biases start at zero.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let gain = if activation == Activation::Relu { 2.0 } else { 1.0 };
        let limit = (3.0 * gain / in_dim.max(1) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            weight: Matrix::from_vec(in_dim, out_dim, data).expect("sized by construction"),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut z = input.matmul(&self.weight)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v = self.activation.apply(*v + b);
            }
        }
        Ok(z)
    }

    /// Given the layer's input, output, and the loss gradient w.r.t. the
    /// output, returns `(grad_weight, grad_bias, grad_input)`.
    pub fn backward(
        &self,
        input: &Matrix,
        output: &Matrix,
        grad_output: &Matrix,
    ) -> Result<(Matrix, Vec<f64>, Matrix)> {
        if output.shape() != grad_output.shape() || input.rows() != output.rows() {
            return Err(Error::Shape(format!(
                "layer backward with input {:?}, output {:?}, gradient {:?}",
                input.shape(),
                output.shape(),
                grad_output.shape()
            )));
        }
        let mut delta = grad_output.clone();
        for (d, &y) in delta.data_mut().iter_mut().zip(output.data()) {
            *d *= self.activation.derivative_from_output(y);
        }
        let grad_weight = input.t_matmul(&delta)?;
        let grad_bias = delta.column_sums();
        let grad_input = delta.matmul_t(&self.weight)?;
        Ok((grad_weight, grad_bias, grad_input))
    }
}

/// Feed-forward stack. Dropout (inverted) follows every layer except the
/// last and is active only in [`Mode::Train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
    pub dropout_rate: f64,
}

/// Everything `forward_pass` saw, kept for the matching `backward_pass`.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `values[0]` is the input batch; `values[k]` is what layer `k` hands
    /// to layer `k + 1` (after dropout, if any).
    pub values: Vec<Matrix>,
    /// Post-activation, pre-dropout output of each layer.
    outputs: Vec<Matrix>,
    /// Scaled keep masks (0 or `1/(1-rate)`) for layers that dropped.
    masks: Vec<Option<Matrix>>,
}

impl Activations {
    pub fn output(&self) -> &Matrix {
        self.values.last().expect("at least the input is present")
    }

    /// Post-dropout output of layer `k` (0-based).
    pub fn layer(&self, k: usize) -> &Matrix {
        &self.values[k + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
    /// Gradient with respect to the input batch.
    pub input: Matrix,
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weight.data());
            out.extend_from_slice(&g.bias);
        }
        out
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>, dropout_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Validation(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        if layers.is_empty() {
            return Err(Error::Validation("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {k} emits {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    /// Layers of the given widths, all with the same activation.
    pub fn init(
        input_dim: usize,
        widths: &[usize],
        activation: Activation,
        dropout_rate: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for &w in widths {
            layers.push(Dense::init(prev, w, activation, rng));
            prev = w;
        }
        Self::new(layers, dropout_rate)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn forward_pass(&self, batch: &Matrix, mode: Mode, rng: &mut SeededRng) -> Result<Activations> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        if !batch.is_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        let n_layers = self.layers.len();
        let mut values = Vec::with_capacity(n_layers + 1);
        let mut outputs = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        values.push(batch.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(values.last().expect("input pushed"))?;
            let drop = mode == Mode::Train && self.dropout_rate > 0.0 && k + 1 < n_layers;
            if drop {
                let keep_scale = 1.0 / (1.0 - self.dropout_rate);
                let mut mask = Matrix::zeros(out.rows(), out.cols());
                for m in mask.data_mut() {
                    if rng.uniform() >= self.dropout_rate {
                        *m = keep_scale;
                    }
                }
                let mut dropped = out.clone();
                for (v, m) in dropped.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
                values.push(dropped);
                masks.push(Some(mask));
            } else {
                values.push(out.clone());
                masks.push(None);
            }
            outputs.push(out);
        }
        if !values.last().expect("non-empty").is_finite() {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(Activations {
            values,
            outputs,
            masks,
        })
    }

    pub fn backward_pass(&self, acts: &Activations, output_gradient: &Matrix) -> Result<Gradients> {
        let mut taps: Vec<Option<&Matrix>> = vec![None; self.layers.len()];
        *taps.last_mut().expect("non-empty") = Some(output_gradient);
        self.backward_with_taps(acts, &taps)
    }

    /// Backpropagation where loss gradients may enter at any layer.
    /// `taps[k]` is the gradient w.r.t. `acts.layer(k)`; absent taps
    /// contribute nothing.
    pub fn backward_with_taps(&self, acts: &Activations, taps: &[Option<&Matrix>]) -> Result<Gradients> {
        let n_layers = self.layers.len();
        if acts.outputs.len() != n_layers || taps.len() != n_layers {
            return Err(Error::Shape(format!(
                "activations for {} layers and {} gradient taps, network has {n_layers} layers",
                acts.outputs.len(),
                taps.len()
            )));
        }
        let batch = acts.values[0].rows();
        let mut layer_grads = Vec::with_capacity(n_layers);
        let mut upstream: Option<Matrix> = None;
        for k in (0..n_layers).rev() {
            let out_shape = acts.outputs[k].shape();
            if out_shape != (batch, self.layers[k].out_dim()) {
                return Err(Error::Shape(format!(
                    "stale activations at layer {k}: {out_shape:?}"
                )));
            }
            let mut grad_value = match (upstream.take(), taps[k]) {
                (Some(u), Some(t)) => {
                    let mut u = u;
                    u.add_assign(t)?;
                    u
                }
                (Some(u), None) => u,
                (None, Some(t)) => {
                    if t.shape() != out_shape {
                        return Err(Error::Shape(format!(
                            "gradient {:?} for layer {k} output {:?}",
                            t.shape(),
                            out_shape
                        )));
                    }
                    t.clone()
                }
                (None, None) => Matrix::zeros(out_shape.0, out_shape.1),
            };
            if let Some(mask) = &acts.masks[k] {
                for (g, m) in grad_value.data_mut().iter_mut().zip(mask.data()) {
                    *g *= m;
                }
            }
            let (gw, gb, gi) = self.layers[k].backward(&acts.values[k], &acts.outputs[k], &grad_value)?;
            layer_grads.push(LayerGradient { weight: gw, bias: gb });
            upstream = Some(gi);
        }
        layer_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
            input: upstream.expect("at least one layer"),
        })
    }

    /// Parameters flattened layer by layer: weights (row-major), then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.write_flat(&mut out);
        out
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Inverse of [`DenseNet::to_flat`]; returns the number of values read.
    pub fn read_flat(&mut self, flat: &[f64]) -> Result<usize> {
        if flat.len() < self.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, network needs {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> SeededRng {
        SeededRng::new(11)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense::new(Matrix::identity(3), vec![0.0; 3], Activation::Identity).unwrap();
        let net = DenseNet::new(vec![layer], 0.0).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.0, 4.0, -1.0]]).unwrap();
        let acts = net.forward_pass(&x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(acts.output(), &x);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let layer = Dense::new(Matrix::from_vec(1, 1, vec![2.0]).unwrap(), vec![1.0], Activation::Relu).unwrap();
        let net = DenseNet::new(vec![layer], 0.0).unwrap();
        let x = Matrix::from_vec(1, 1, vec![-3.0]).unwrap();
        let acts = net.forward_pass(&x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(acts.output()[(0, 0)], 0.0);
    }

    #[test]
    fn two_layer_net_matches_hand_arithmetic() {
        // h = relu([1,1]·W1 + b1) with W1 = [[1,-2],[0.5,1]], b1 = [0, 0.5]
        //   = relu([1.5, -0.5]) = [1.5, 0]
        // y = h·W2 + b2 with W2 = [[2],[3]], b2 = [-1] → 2.0
        let l1 = Dense::new(
            Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 1.0]]).unwrap(),
            vec![0.0, 0.5],
            Activation::Relu,
        )
        .unwrap();
        let l2 = Dense::new(
            Matrix::from_rows(&[vec![2.0], vec![3.0]]).unwrap(),
            vec![-1.0],
            Activation::Identity,
        )
        .unwrap();
        let net = DenseNet::new(vec![l1, l2], 0.0).unwrap();
        let x = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let acts = net.forward_pass(&x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(acts.layer(0).row(0), &[1.5, 0.0]);
        assert_eq!(acts.output()[(0, 0)], 2.0);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = DenseNet::init(3, &[2], Activation::Relu, 0.0, &mut rng()).unwrap();
        let wrong = Matrix::zeros(1, 4);
        assert!(matches!(net.forward_pass(&wrong, Mode::Eval, &mut rng()), Err(Error::Shape(_))));
        let nan = Matrix::from_vec(1, 3, vec![0.0, f64::NAN, 1.0]).unwrap();
        assert!(matches!(net.forward_pass(&nan, Mode::Eval, &mut rng()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn incompatible_layers_rejected() {
        let mut r = rng();
        let a = Dense::init(3, 4, Activation::Relu, &mut r);
        let b = Dense::init(5, 1, Activation::Relu, &mut r);
        assert!(matches!(DenseNet::new(vec![a, b], 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut r = rng();
        let net = DenseNet::init(4, &[5, 3, 2], Activation::Sigmoid, 0.0, &mut r).unwrap();
        let x = Matrix::from_vec(3, 4, (0..12).map(|v| v as f64 * 0.1).collect()).unwrap();
        let acts = net.forward_pass(&x, Mode::Eval, &mut r).unwrap();
        let g = net.backward_pass(&acts, &Matrix::zeros(3, 2)).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_neuron_chain_rule() {
        let layer = Dense::new(Matrix::from_vec(1, 1, vec![0.7]).unwrap(), vec![0.2], Activation::Identity).unwrap();
        let net = DenseNet::new(vec![layer], 0.0).unwrap();
        let x = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
        let acts = net.forward_pass(&x, Mode::Eval, &mut rng()).unwrap();
        let g = net
            .backward_pass(&acts, &Matrix::from_vec(1, 1, vec![1.0]).unwrap())
            .unwrap();
        assert_eq!(g.layers[0].weight[(0, 0)], 3.0);
        assert_eq!(g.layers[0].bias[0], 1.0);
        assert_eq!(g.input[(0, 0)], 0.7);
    }

    #[test]
    fn mismatched_activations_rejected() {
        let mut r = rng();
        let a = DenseNet::init(2, &[3, 1], Activation::Relu, 0.0, &mut r).unwrap();
        let b = DenseNet::init(2, &[4, 1], Activation::Relu, 0.0, &mut r).unwrap();
        let x = Matrix::zeros(2, 2);
        let acts = b.forward_pass(&x, Mode::Eval, &mut r).unwrap();
        assert!(matches!(a.backward_pass(&acts, &Matrix::zeros(2, 1)), Err(Error::Shape(_))));
        let acts = a.forward_pass(&x, Mode::Eval, &mut r).unwrap();
        assert!(matches!(a.backward_pass(&acts, &Matrix::zeros(2, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn flat_round_trip() {
        let mut r = rng();
        let net = DenseNet::init(3, &[4, 2], Activation::Relu, 0.1, &mut r).unwrap();
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.num_params());
        let mut other = DenseNet::init(3, &[4, 2], Activation::Relu, 0.1, &mut r).unwrap();
        assert_ne!(other, net);
        assert_eq!(other.read_flat(&flat).unwrap(), flat.len());
        assert_eq!(other, net);
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut r = rng();
        let net = DenseNet::init(2, &[50, 1], Activation::Relu, 0.5, &mut r).unwrap();
        let x = Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
        let e1 = net.forward_pass(&x, Mode::Eval, &mut r).unwrap();
        let e2 = net.forward_pass(&x, Mode::Eval, &mut r).unwrap();
        assert_eq!(e1.output(), e2.output());
        let t = net.forward_pass(&x, Mode::Train, &mut r).unwrap();
        let zeros = t.layer(0).data().iter().filter(|&&v| v == 0.0).count();
        let eval_zeros = e1.layer(0).data().iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > eval_zeros);
    }

    #[test]
    fn dropout_expectation_matches_eval_output() {
        // Dropout feeds a linear output layer, so the train-mode mean equals
        // the eval-mode output exactly in expectation.
        let mut r = SeededRng::new(5);
        let net = DenseNet::init(3, &[8, 1], Activation::Relu, 0.2, &mut r).unwrap();
        let mut net = net;
        net.layers[1].activation = Activation::Identity;
        let x = Matrix::from_vec(1, 3, vec![0.3, -1.2, 0.8]).unwrap();
        let eval = net.forward_pass(&x, Mode::Eval, &mut r).unwrap().output()[(0, 0)];
        let n = 20_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| net.forward_pass(&x, Mode::Train, &mut r).unwrap().output()[(0, 0)])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - eval).abs() < 3.0 * se, "mean {mean} eval {eval} se {se}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let build = || {
            let mut r = SeededRng::new(99);
            let net = DenseNet::init(4, &[6, 3], Activation::Relu, 0.3, &mut r).unwrap();
            let x = Matrix::from_vec(2, 4, vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.0]).unwrap();
            let acts = net.forward_pass(&x, Mode::Train, &mut r).unwrap();
            let g = net.backward_pass(&acts, &Matrix::from_vec(2, 3, vec![1.0; 6]).unwrap()).unwrap();
            (acts.output().clone(), g.to_flat())
        };
        let (o1, g1) = build();
        let (o2, g2) = build();
        assert_eq!(o1, o2);
        assert_eq!(g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
