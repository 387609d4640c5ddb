//! Category-agnostic regression from sketch-domain inputs (few-shot sketch
//! classifiers, fused sketch features, category embeddings, or a coarse photo
//! classifier fused with a sketch) to photo-domain linear classifiers.
//!
//! Module map:
//!
//! * [`numeric`]: dense matrices and the seeded random stream.
//! * [`dataset`]: feature manifests, splits, sampling, synthetic worlds.
//! * [`svm`]: hinge-loss linear classifiers (the regression inputs and targets).
//! * [`losses`]: regression and performance losses.
//! * [`regnet`]: the fully connected and convolutional regressors, Adam.
//! * [`pipelines`]: input assembly, regressor training, synthesis, experiments.
//! * [`eval`]: AP / accuracy and the non-regression baselines.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod numeric;
pub mod pipelines;
pub mod regnet;
pub mod svm;

pub use error::{Error, Result};
pub use numeric::{DenseMatrix, RandomStream};
