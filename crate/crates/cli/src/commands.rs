use std::fs;
use std::path::Path;

use log::info;
use serde::Serialize;
use serde_json::json;

use s2m_core::dataset::{
    generate_world, sample_category, sample_few_shot, CoarseGrouping, CoarseStructure, Domain,
    DomainMap, Manifest, SyntheticConfig,
};
use s2m_core::eval::{average_precision_with, multiclass_accuracy, ApMode, RankedResult};
use s2m_core::pipelines::{
    build_binary_input, build_multiclass_input, coarse_models, resolve_split, summarize,
    synthesize_classifier, train_regressor, write_csv, ExperimentConfig, InputModality,
    InputSources, PadRow, ResultRow, SplitSpec, TrainingRun, TrainingSettings,
};
use s2m_core::regnet::{AdamConfig, Checkpoint};
use s2m_core::svm::{
    augmented_score, train_binary_svm, train_multiclass_svm, LinearModel, SvmConfig,
};
use s2m_core::{Error, RandomStream, Result};

use crate::{
    parse_serde, Command, Common, EvaluateArgs, ExperimentArgs, GenSynthArgs, HyperArgs,
    SynthesizeArgs, TrainRegressorArgs, TrainSvmArgs,
};

/// Stream indices under `--seed` for the commands that draw randomness.
const STREAM_SPLIT: u64 = 1;
const STREAM_SAMPLE: u64 = 2;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynth(a) => gen_synth(a),
        Command::TrainSvm(a) => train_svm(a),
        Command::TrainRegressor(a) => train(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn setup(common: &Common) -> Result<()> {
    if let Some(n) = common.jobs {
        if n == 0 {
            return Err(Error::Config(vec!["--jobs must be at least 1".into()]));
        }
        // A pool configured earlier in the process is kept.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    fs::create_dir_all(&common.out).map_err(|e| io_error(&common.out, e))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Argument(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

/// Records the command and its fully resolved configuration.
fn write_run<T: Serialize>(common: &Common, command: &str, resolved: &T) -> Result<()> {
    write_json(
        &common.out.join("run.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": common.seed,
            "config": resolved,
        }),
    )
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    setup(&a.common)?;
    let config = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str::<SyntheticConfig>(&text)
                .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?
        }
        None => {
            let mut c = SyntheticConfig::new(a.d, a.categories, a.samples, a.common.seed);
            c.cluster_std = a.cluster_std;
            c.noise_std = a.noise_std;
            if let Some(taps) = &a.taps {
                c.domain_map = DomainMap::Toeplitz {
                    taps: taps.clone(),
                    offset: a.offset,
                };
            }
            c.coarse = a.groups.map(|groups| CoarseStructure {
                groups,
                fine_std: a.fine_std,
            });
            c.embedding_dim = a.embedding_dim;
            c.sketch_quality = a.sketch_quality;
            c
        }
    };
    config.validate()?;
    let world = generate_world(&config)?;
    world.manifest.save(&a.common.out)?;
    if let Some(g) = &world.grouping {
        write_json(&a.common.out.join("grouping.json"), g)?;
    }
    info!("wrote {} records", world.manifest.records().len());
    write_run(&a.common, "gen-synth", &config)
}

fn load_grouping(path: Option<&Path>) -> Result<Option<CoarseGrouping>> {
    path.map(CoarseGrouping::load).transpose()
}

fn train_svm(a: TrainSvmArgs) -> Result<()> {
    setup(&a.common)?;
    let domain: Domain = a.domain.parse()?;
    let manifest = Manifest::load(&a.manifest)?;
    let mut stream = RandomStream::new(a.common.seed).child(STREAM_SAMPLE);
    let cfg = SvmConfig {
        c_reg: a.c,
        epochs: a.epochs,
        seed: stream.next_u64(),
    };
    let positives = |c: &str, stream: &mut RandomStream| -> Result<Vec<Vec<f64>>> {
        let all = manifest.vectors(c, domain);
        let picked = match a.k {
            Some(k) => sample_category(&manifest, c, domain, k, stream)?,
            None => all,
        };
        if picked.is_empty() {
            return Err(Error::Argument(format!(
                "category `{c}` has no {domain} records"
            )));
        }
        Ok(picked.into_iter().map(<[f64]>::to_vec).collect())
    };
    let model = if let [category] = a.categories.as_slice() {
        let pos = positives(category, &mut stream)?;
        let others: Vec<String> = manifest
            .categories()
            .iter()
            .filter(|c| *c != category)
            .cloned()
            .collect();
        let shot = sample_few_shot(
            &manifest,
            category,
            domain,
            0,
            a.negatives,
            &others,
            &mut stream,
        )?;
        let pos: Vec<&[f64]> = pos.iter().map(Vec::as_slice).collect();
        LinearModel::Binary(train_binary_svm(&pos, &shot.negatives, &cfg)?)
    } else {
        let mut owned = Vec::new();
        for c in &a.categories {
            owned.push((c.clone(), positives(c, &mut stream)?));
        }
        let per_class: Vec<(String, Vec<&[f64]>)> = owned
            .iter()
            .map(|(c, v)| (c.clone(), v.iter().map(Vec::as_slice).collect()))
            .collect();
        LinearModel::MultiClass(train_multiclass_svm(&per_class, &cfg)?)
    };
    model.save(a.common.out.join("model.json"))?;
    write_run(&a.common, "train-svm", &a)
}

fn resolve_settings(h: &HyperArgs, multiclass: bool) -> Result<TrainingSettings> {
    let mut s = match &h.settings {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?
        }
        None => TrainingSettings::default(),
    };
    if let Some(v) = h.alpha {
        s.loss_weights.alpha = v;
    }
    if let Some(v) = h.beta {
        s.loss_weights.beta = v;
    }
    if let Some(v) = h.lr {
        s.adam = AdamConfig { lr: v, ..s.adam };
    }
    let batch = if multiclass {
        h.batch_multi
    } else {
        h.batch_binary
    };
    if batch.is_some() {
        s.batch_size = batch;
    }
    if let Some(v) = h.ensembles {
        s.ensembles = v;
    }
    if let Some(v) = h.negatives {
        s.negatives = v;
    }
    if let Some(v) = h.epochs {
        s.epochs = v;
    }
    if let Some(v) = h.hidden {
        s.hidden = v;
    }
    if let Some(v) = h.leaky_slope {
        s.leaky_slope = v;
    }
    Ok(s)
}

fn train(a: TrainRegressorArgs) -> Result<()> {
    setup(&a.common)?;
    let pad_row: PadRow = parse_serde(&a.pad_row).map_err(|e| Error::Config(vec![e]))?;
    let mut modality = InputModality::new(a.modality, a.k);
    modality.c = a.c;
    modality.pad_row = pad_row;
    let settings = resolve_settings(&a.hyper, modality.kind.is_multiclass())?;
    let mut problems = modality.problems();
    problems.extend(settings.problems());
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }

    let manifest = Manifest::load(&a.manifest)?;
    let grouping = load_grouping(a.grouping.as_deref())?;
    let spec = if let Some(train) = &a.train {
        let test = manifest
            .categories()
            .iter()
            .filter(|c| !train.contains(c))
            .cloned()
            .collect();
        SplitSpec::Explicit {
            train: train.clone(),
            test,
        }
    } else if let (Some(train), Some(test)) = (a.split_train, a.split_test) {
        SplitSpec::Random { train, test }
    } else if let Some(groups) = a.held_out_groups {
        SplitSpec::HeldOutGroups { groups }
    } else {
        return Err(Error::Config(vec![
            "one of --train, --split-train/--split-test or --held-out-groups is required".into(),
        ]));
    };
    let root = RandomStream::new(a.common.seed);
    let split = resolve_split(
        &spec,
        &manifest,
        grouping.as_ref(),
        &mut root.child(STREAM_SPLIT),
    )?;
    let run = TrainingRun {
        modality,
        split: split.clone(),
        settings,
        seed: root.child(STREAM_SAMPLE).seed(),
        grouping,
    };
    run.validate()?;
    let output = train_regressor(&run, &manifest)?;
    output
        .checkpoint
        .save(a.common.out.join("checkpoint.json"))?;
    write_json(&a.common.out.join("split.json"), &split)?;
    write_json(&a.common.out.join("training_log.json"), &output.log)?;
    write_run(
        &a.common,
        "train-regressor",
        &json!({
            "manifest": a.manifest,
            "grouping": a.grouping,
            "modality": run.modality,
            "split": split,
            "settings": run.settings,
            "training_seed": run.seed,
        }),
    )
}

fn synthesize(a: SynthesizeArgs) -> Result<()> {
    setup(&a.common)?;
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let grouping = load_grouping(a.grouping.as_deref())?;
    let pool = a
        .pool
        .clone()
        .unwrap_or_else(|| manifest.categories().to_vec());
    let sources = InputSources {
        negatives: a.negatives,
        svm_epochs: a.svm_epochs,
        ..InputSources::new(&manifest, &pool)
    };
    let modality = checkpoint.modality;
    let mut stream = RandomStream::new(a.common.seed).child(STREAM_SAMPLE);
    let (input, labels) = if modality.kind.is_multiclass() {
        let built = build_multiclass_input(&modality, &sources, &a.categories, a.c, &mut stream)?;
        (built.values, Some(a.categories.clone()))
    } else {
        let [category] = a.categories.as_slice() else {
            return Err(Error::Config(vec![format!(
                "{} synthesizes one category at a time, got {}",
                modality.kind,
                a.categories.len()
            )]));
        };
        let coarse = match &grouping {
            Some(g) if modality.kind == s2m_core::pipelines::ModalityKind::CoarseFusion => {
                let group = g.group_of(category).ok_or_else(|| {
                    Error::Argument(format!("category `{category}` belongs to no coarse group"))
                })?;
                let models = coarse_models(
                    &manifest,
                    g,
                    a.coarse_photos,
                    a.svm_epochs,
                    a.coarse_c,
                    a.common.seed,
                )?;
                Some(models[group].clone())
            }
            _ => None,
        };
        let built = build_binary_input(
            &modality,
            &sources,
            category,
            coarse.as_deref(),
            a.c,
            &mut stream,
        )?;
        (built.values, None)
    };
    let model = synthesize_classifier(&checkpoint, &input, labels.as_deref())?;
    model.save(a.common.out.join(&a.name))?;
    write_run(&a.common, "synthesize", &a)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    setup(&a.common)?;
    let manifest = Manifest::load(&a.manifest)?;
    let ranked: Vec<String> = a
        .photos
        .clone()
        .unwrap_or_else(|| manifest.categories().to_vec());
    let photos: Vec<(&str, &[f64])> = ranked
        .iter()
        .flat_map(|c| {
            manifest
                .vectors(c, Domain::Photo)
                .into_iter()
                .map(move |v| (c.as_str(), v))
        })
        .collect();
    let mode = if a.interpolated {
        ApMode::Interpolated
    } else {
        ApMode::Raw
    };
    let mut rows = Vec::new();
    for (i, spec) in a.models.iter().enumerate() {
        let (category, path) = match spec.split_once('=') {
            Some((c, p)) => (Some(c), p),
            None => (None, spec.as_str()),
        };
        match (LinearModel::load(path)?, category) {
            (LinearModel::Binary(m), Some(category)) => {
                let scores = photos
                    .iter()
                    .map(|(_, x)| {
                        if x.len() + 1 != m.weights().len() {
                            return Err(Error::Shape(format!(
                                "model {path} expects {} features, photos have {}",
                                m.weights().len() - 1,
                                x.len()
                            )));
                        }
                        Ok(augmented_score(m.weights(), x))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let labels = photos.iter().map(|(c, _)| *c == category).collect();
                let ap = average_precision_with(&RankedResult::new(scores, labels)?, mode)?;
                rows.push(ResultRow {
                    experiment_id: a.experiment_id.clone(),
                    category: category.to_string(),
                    repetition: i,
                    metric_name: "ap".into(),
                    value: ap,
                });
            }
            (LinearModel::Binary(_), None) => {
                return Err(Error::Config(vec![format!(
                    "binary model `{path}` needs its category: --model CATEGORY={path}"
                )]))
            }
            (LinearModel::MultiClass(m), _) => {
                let labels = m.class_labels().to_vec();
                let (xs, ys): (Vec<&[f64]>, Vec<&str>) = labels
                    .iter()
                    .flat_map(|c| {
                        manifest
                            .vectors(c, Domain::Photo)
                            .into_iter()
                            .map(move |v| (v, c.as_str()))
                    })
                    .unzip();
                rows.push(ResultRow {
                    experiment_id: a.experiment_id.clone(),
                    category: labels.join("+"),
                    repetition: i,
                    metric_name: "accuracy".into(),
                    value: multiclass_accuracy(&m, &xs, &ys)?,
                });
            }
        }
    }
    write_csv(&a.common.out.join("results.csv"), &rows)?;
    write_csv(&a.common.out.join("summary.csv"), &summarize(&rows))?;
    write_run(&a.common, "evaluate", &a)
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let common = Common {
        seed: config.seed,
        jobs: a.jobs,
        out: a.out,
    };
    setup(&common)?;
    let report = s2m_core::pipelines::run_experiment(&config)?;
    report.write(&common.out)?;
    write_run(&common, "experiment", &config)
}
