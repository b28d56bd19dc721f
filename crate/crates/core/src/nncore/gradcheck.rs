use super::dense::{DenseNet, Mode};
use super::matrix::Matrix;
use crate::error::Result;
use crate::rng::SeededRng;

/// Relative error used by the checker.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Parameter indices to probe: all of them when there are at most
/// `max_samples`, otherwise a seeded sample without replacement.
pub fn sample_indices(n: usize, max_samples: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n > max_samples {
        let mut rng = SeededRng::new(seed);
        rng.shuffle(&mut idx);
        idx.truncate(max_samples);
        idx.sort_unstable();
    }
    idx
}

/// Compares an analytic gradient against central differences of `loss`
/// at `params`, over the given indices. Returns the max relative error.
pub fn check_gradient<F>(params: &[f64], analytic: &[f64], indices: &[usize], eps: f64, mut loss: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = loss(&probe)?;
        probe[i] = orig - eps;
        let minus = loss(&probe)?;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Gradient check of a [`DenseNet`] composed with a batch loss.
///
/// `loss_fn` maps the network output to `(loss, d loss / d output)`.
/// Runs in eval mode so the objective is a deterministic function of the
/// parameters. At most `max_samples` parameters are probed.
pub fn gradient_check<L>(net: &DenseNet, loss_fn: L, batch: &Matrix, eps: f64, max_samples: usize) -> Result<f64>
where
    L: Fn(&Matrix) -> Result<(f64, Matrix)>,
{
    let mut rng = SeededRng::new(0);
    let acts = net.forward_pass(batch, Mode::Eval, &mut rng)?;
    let (_, out_grad) = loss_fn(acts.output())?;
    let analytic = net.backward_pass(&acts, &out_grad)?.to_flat();
    let params = net.to_flat();
    let indices = sample_indices(params.len(), max_samples, 0x6772_6164);
    let mut scratch = net.clone();
    check_gradient(&params, &analytic, &indices, eps, |p| {
        scratch.read_flat(p)?;
        let acts = scratch.forward_pass(batch, Mode::Eval, &mut rng)?;
        Ok(loss_fn(acts.output())?.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::dense::{Activation, Dense};

    fn half_sse(out: &Matrix, target: &Matrix) -> (f64, Matrix) {
        let mut grad = out.clone();
        let mut loss = 0.0;
        for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
            let d = *g - t;
            loss += 0.5 * d * d;
            *g = d;
        }
        (loss, grad)
    }

    fn batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = SeededRng::new(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_net_with_l2_loss_is_exact() {
        let mut r = SeededRng::new(1);
        let net = DenseNet::new(vec![Dense::init(3, 2, Activation::Identity, &mut r)], 0.0).unwrap();
        let x = batch(5, 3, 2);
        let target = batch(5, 2, 3);
        let err = gradient_check(&net, |o| Ok(half_sse(o, &target)), &x, 1e-5, 1000).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn three_layer_net_matches_finite_differences() {
        let mut r = SeededRng::new(4);
        let mut net = DenseNet::init(4, &[6, 5, 2], Activation::Sigmoid, 0.0, &mut r).unwrap();
        net.layers[1].activation = Activation::Relu;
        net.layers[2].activation = Activation::Identity;
        let x = batch(7, 4, 5);
        let target = batch(7, 2, 6);
        let err = gradient_check(&net, |o| Ok(half_sse(o, &target)), &x, 1e-5, 1000).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut r = SeededRng::new(8);
        let net = DenseNet::init(3, &[4, 1], Activation::Sigmoid, 0.0, &mut r).unwrap();
        let x = batch(4, 3, 9);
        let target = batch(4, 1, 10);
        let acts = net.forward_pass(&x, Mode::Eval, &mut r).unwrap();
        let (_, g) = half_sse(acts.output(), &target);
        let analytic: Vec<f64> = net.backward_pass(&acts, &g).unwrap().to_flat().iter().map(|v| v * 1.1).collect();
        let params = net.to_flat();
        let idx = sample_indices(params.len(), 100, 0);
        let mut scratch = net.clone();
        let err = check_gradient(&params, &analytic, &idx, 1e-5, |p| {
            scratch.read_flat(p)?;
            let a = scratch.forward_pass(&x, Mode::Eval, &mut SeededRng::new(0))?;
            Ok(half_sse(a.output(), &target).0)
        })
        .unwrap();
        assert!(err > 1e-2, "relative error {err}");
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        assert_eq!(sample_indices(5, 10, 1), vec![0, 1, 2, 3, 4]);
        let a = sample_indices(1000, 50, 3);
        assert_eq!(a.len(), 50);
        assert_eq!(a, sample_indices(1000, 50, 3));
    }
}
