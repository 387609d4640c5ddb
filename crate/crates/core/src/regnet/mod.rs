//! Regression networks: a batch-normalized MLP for vector outputs, a
//! shape-preserving convolutional stack for matrix outputs, Adam, and
//! checkpoints.

mod adam;
mod checkpoint;
mod conv;
mod layers;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{payload_path, Architecture, Checkpoint, Regressor, CHECKPOINT_VERSION};
pub use conv::{ConvCache, ConvConfig, ConvGrads, ConvRegressor, CHANNEL_PLAN};
pub use layers::{
    leaky_relu, leaky_relu_backward, Affine, BatchNorm, BatchNormCache, BatchNormConfig, Conv1d,
    ParamGrads,
};
pub use mlp::{MlpCache, MlpConfig, MlpGrads, MlpRegressor};
