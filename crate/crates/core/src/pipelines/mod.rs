//! End-to-end procedures: input assembly per modality, regressor training
//! against many-shot photo classifiers, synthesis, and experiment sweeps.

mod experiment;
mod modality;
mod synthesis;
mod training;

pub use experiment::{
    means_by_experiment, read_csv, resolve_split, run_experiment, run_experiment_on, summarize,
    write_csv, EvaluationSettings, ExperimentConfig, ExperimentReport, ResultRow, SplitSpec,
    SummaryRow, SweepAxes, SweepRun,
};
pub use modality::{
    build_binary_input, build_multiclass_input, BuiltInput, DomainDims, InputModality,
    InputSources, ModalityKind, PadRow,
};
pub use synthesis::synthesize_classifier;
pub use training::{
    coarse_models, photo_group_model, photo_model, train_regressor, EpochLog, GroundTruth,
    LossBreakdown, NegativeScope, TrainingLog, TrainingOutput, TrainingRun, TrainingSettings,
};
