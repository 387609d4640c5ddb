//! Ranking and classification metrics plus the non-regression baselines.

mod baselines;
mod metrics;

pub use baselines::{nn_baseline, nn_classify, nn_score, pca, SubspaceAlignment};
pub use metrics::{
    average_precision, average_precision_with, mean_ap, mean_ap_with, multiclass_accuracy, ApMode,
    RankedResult,
};
