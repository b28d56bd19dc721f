//! Minimal dense feed-forward engine: matrices, layers with exact
//! backpropagation, Adam, and a finite-difference gradient checker.
//! Everything is `f64`.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod matrix;

pub use adam::{adam_update, AdamState};
pub use dense::{sigmoid, Activation, Activations, Dense, DenseNet, Gradients, LayerGradient, Mode};
pub use gradcheck::{check_gradient, gradient_check, relative_error, sample_indices};
pub use matrix::Matrix;
