//! Promotion response modeling with direct and enduring effects, budgeted
//! incentive allocation, and offline evaluation on randomized trial logs.
//!
//! The pipeline: [`datagen`] simulates an RCT with known ground truth,
//! [`model`] learns per-incentive propensities and amounts, [`allocator`]
//! picks one incentive per customer under a cost budget, and [`evaluator`]
//! estimates the value of the resulting plan from the trial data.

pub mod allocator;
pub mod datagen;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nncore;
pub mod rng;

pub use error::{Error, Result};
pub use rng::SeededRng;
