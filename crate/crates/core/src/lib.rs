//! Noise-robust training of dense classifiers on data with closed-set and
//! open-set label noise.
//!
//! The pipeline per mini-batch:
//!
//! 1. Two stochastic views of every sample are pushed through the student
//!    network ([`datagen::augment`], [`nn::MlpModel::forward`]).
//! 2. Samples are split into clean / in-distribution noisy / out-of-distribution
//!    noisy subsets. Clean-ness is scored globally as one minus the base-2
//!    Jensen-Shannon divergence between the prediction and the given label;
//!    OOD-ness is the disagreement of the two views' predicted classes
//!    ([`selection`]).
//! 3. Targets are assigned per subset: smoothed given labels, mean-teacher
//!    pseudo-labels, or temperature-flattened teacher labels ([`relabel`]).
//! 4. The student is updated on a mix of two-view cross-entropy and a signed
//!    symmetric-KL consistency term ([`objective`], [`nn::backward`]), then the
//!    teacher tracks the student by exponential moving average.
//!
//! [`trainer`] drives the epochs, warm-up gating and threshold schedule, and
//! reports per-epoch metrics.

pub mod datagen;
pub mod error;
pub mod nn;
pub mod objective;
pub mod prob;
pub mod relabel;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
pub use prob::ProbDist;
