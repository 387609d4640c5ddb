//! `s2m`: generate synthetic worlds, train regressors, synthesize photo
//! classifiers from sketches and evaluate them.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use s2m_core::pipelines::ModalityKind;
use s2m_core::Error;

#[derive(Parser, Debug)]
#[command(name = "s2m", version, about = "Sketch-to-photo classifier synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-domain feature world.
    GenSynth(GenSynthArgs),
    /// Train a linear SVM on manifest records.
    TrainSvm(TrainSvmArgs),
    /// Train a sketch-to-photo model regressor.
    TrainRegressor(TrainRegressorArgs),
    /// Regress a photo classifier from sketches of one category or class group.
    Synthesize(SynthesizeArgs),
    /// Score stored classifiers on manifest photos.
    Evaluate(EvaluateArgs),
    /// Run a full experiment sweep from a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct Common {
    /// Root seed; every random choice derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for independent jobs (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct GenSynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Full generator config as JSON; replaces every other generator flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 25)]
    pub categories: usize,
    /// Photos and sketches per category.
    #[arg(long, default_value_t = 30)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub cluster_std: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise_std: f64,
    /// Banded sketch map taps, odd count, centred on the diagonal; identity if absent.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub taps: Option<Vec<f64>>,
    /// Constant sketch offset used with `--taps`.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
    /// Number of coarse groups; writes grouping.json.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub fine_std: f64,
    #[arg(long, default_value_t = 0)]
    pub embedding_dim: usize,
    #[arg(long)]
    pub sketch_quality: bool,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct TrainSvmArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    /// sketch or photo.
    #[arg(long, default_value = "photo")]
    pub domain: String,
    /// One category trains a binary model against the others, several a
    /// one-vs-rest model.
    #[arg(long, value_delimiter = ',', required = true)]
    pub categories: Vec<String>,
    /// Positives per class; all records if absent.
    #[arg(long)]
    pub k: Option<usize>,
    /// Negatives for a binary model.
    #[arg(long, default_value_t = 600)]
    pub negatives: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct HyperArgs {
    /// Training settings JSON used as the base for the flags below.
    #[arg(long)]
    pub settings: Option<PathBuf>,
    /// Regression loss weight [default: 0.01].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Performance loss weight [default: 1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Adam learning rate [default: 2e-5].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size for binary modalities [default: 64].
    #[arg(long)]
    pub batch_binary: Option<usize>,
    /// Minibatch size for multiclass modalities [default: 16].
    #[arg(long)]
    pub batch_multi: Option<usize>,
    /// Inputs per train category or random groups [default: 500].
    #[arg(long)]
    pub ensembles: Option<usize>,
    /// Negative sketches per few-shot sketch classifier [default: 600].
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct TrainRegressorArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub grouping: Option<PathBuf>,
    #[arg(long, value_parser = parse_modality)]
    pub modality: ModalityKind,
    /// Sketches per input.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Way count for multiclass modalities.
    #[arg(long, default_value_t = 1)]
    pub c: usize,
    /// ones or zeros.
    #[arg(long, default_value = "ones")]
    pub pad_row: String,
    /// Explicit train categories; everything else in the manifest is test.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["split_train", "held_out_groups"])]
    pub train: Option<Vec<String>>,
    /// Random split: number of train categories.
    #[arg(long, requires = "split_test")]
    pub split_train: Option<usize>,
    #[arg(long, requires = "split_train")]
    pub split_test: Option<usize>,
    /// Hold out this many whole coarse groups as test categories.
    #[arg(long, requires = "grouping")]
    pub held_out_groups: Option<usize>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Coarse grouping, needed for coarse fusion.
    #[arg(long)]
    pub grouping: Option<PathBuf>,
    /// Target category (binary) or ordered class list (multiclass).
    #[arg(long, value_delimiter = ',', required = true)]
    pub categories: Vec<String>,
    /// Categories negative sketches may come from; all if absent.
    #[arg(long, value_delimiter = ',')]
    pub pool: Option<Vec<String>>,
    #[arg(long, default_value_t = 600)]
    pub negatives: usize,
    /// Regularization of the few-shot sketch classifier.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 50)]
    pub svm_epochs: usize,
    /// Photos per coarse classifier.
    #[arg(long, default_value_t = 250)]
    pub coarse_photos: usize,
    #[arg(long, default_value_t = 1.0)]
    pub coarse_c: f64,
    /// Output model file name inside `--out`.
    #[arg(long, default_value = "model.json")]
    pub name: String,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    /// `category=path` for binary models, or a multiclass model path.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Categories whose photos are ranked; all if absent.
    #[arg(long, value_delimiter = ',')]
    pub photos: Option<Vec<String>>,
    /// Pascal-style interpolated precision.
    #[arg(long)]
    pub interpolated: bool,
    #[arg(long, default_value = "evaluate")]
    pub experiment_id: String,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct ExperimentArgs {
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for independent jobs (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
}

fn parse_modality(s: &str) -> Result<ModalityKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses a string into any unit-variant serde enum.
pub fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn report(kind: &str, message: &str, problems: &[String]) {
    let mut body = json!({ "error": kind, "message": message });
    if !problems.is_empty() {
        body["problems"] = json!(problems);
    }
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error");
            report("usage", first.trim_start_matches("error: "), &[]);
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("S2M_LOG", "error"))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(problems)) => {
            report("config", "invalid configuration", &problems);
            ExitCode::from(2)
        }
        Err(e) => {
            report(e.kind(), &e.to_string(), &[]);
            ExitCode::from(1)
        }
    }
}
