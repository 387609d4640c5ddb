use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::{CategorySplit, CoarseGrouping, Domain, Manifest};
use crate::error::{Error, Result};
use crate::eval::{
    average_precision_with, nn_classify, nn_score, ApMode, RankedResult, SubspaceAlignment,
};
use crate::numeric::RandomStream;
use crate::pipelines::modality::{
    build_binary_input, build_multiclass_input, BuiltInput, InputModality, InputSources,
    ModalityKind,
};
use crate::pipelines::synthesis::synthesize_classifier;
use crate::pipelines::training::{
    train_regressor, TrainingLog, TrainingOutput, TrainingRun, TrainingSettings,
};
use crate::regnet::Checkpoint;
use crate::svm::{argmax, augmented_score, LinearModel, MultiClassLinearModel};

const STREAM_SPLIT: u64 = 1;
const STREAM_SUBSET: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_EVAL: u64 = 4;

/// How train and test categories are chosen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    Explicit {
        train: Vec<String>,
        test: Vec<String>,
    },
    /// Random disjoint draw of the given counts.
    Random { train: usize, test: usize },
    /// All fine categories of `groups` random coarse groups are held out;
    /// every other grouped category trains.
    HeldOutGroups { groups: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub k: Vec<usize>,
    pub train_categories: Vec<usize>,
    /// Evaluate with sketches from the bottom, middle, and top quality
    /// thirds of each test category.
    pub quality: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub ap_mode: ApMode,
    /// Emit nearest-neighbour, subspace-alignment, and raw sketch-classifier
    /// metrics next to the regressed ones.
    pub baselines: bool,
    pub subspace_dim: usize,
    /// Sketches per input at test time, one evaluation of the same trained
    /// regressor each; empty evaluates at the training `k` only.
    pub test_k: Vec<usize>,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            ap_mode: ApMode::Raw,
            baselines: true,
            subspace_dim: 32,
            test_k: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub manifest: PathBuf,
    pub grouping: Option<PathBuf>,
    pub split: SplitSpec,
    pub modality: InputModality,
    pub seed: u64,
    pub repetitions: usize,
    pub training: TrainingSettings,
    pub evaluation: EvaluationSettings,
    pub sweep: SweepAxes,
}

const FIELDS: [&str; 10] = [
    "experiment_id",
    "manifest",
    "grouping",
    "split",
    "modality",
    "seed",
    "repetitions",
    "training",
    "evaluation",
    "sweep",
];

fn field<T: DeserializeOwned>(
    obj: &Map<String, Value>,
    name: &str,
    default: Option<T>,
    problems: &mut Vec<String>,
) -> Option<T> {
    match obj.get(name) {
        None => {
            if default.is_none() {
                problems.push(format!("missing field `{name}`"));
            }
            default
        }
        Some(v) => match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                problems.push(format!("`{name}`: {e}"));
                None
            }
        },
    }
}

impl ExperimentConfig {
    /// Parses and validates a config, reporting every problem at once.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(vec![format!("not valid JSON: {e}")]))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config(vec!["config must be a JSON object".into()]))?;
        let mut p = Vec::new();
        for key in obj.keys() {
            if !FIELDS.contains(&key.as_str()) {
                p.push(format!("unknown field `{key}`"));
            }
        }
        let experiment_id: Option<String> = field(obj, "experiment_id", None, &mut p);
        let manifest: Option<PathBuf> = field(obj, "manifest", None, &mut p);
        let grouping: Option<Option<PathBuf>> = field(obj, "grouping", Some(None), &mut p);
        let split: Option<SplitSpec> = field(obj, "split", None, &mut p);
        let modality: Option<InputModality> = field(obj, "modality", None, &mut p);
        let seed: Option<u64> = field(obj, "seed", Some(0), &mut p);
        let repetitions: Option<usize> = field(obj, "repetitions", Some(100), &mut p);
        let training: Option<TrainingSettings> =
            field(obj, "training", Some(TrainingSettings::default()), &mut p);
        let evaluation: Option<EvaluationSettings> = field(
            obj,
            "evaluation",
            Some(EvaluationSettings::default()),
            &mut p,
        );
        let sweep: Option<SweepAxes> = field(obj, "sweep", Some(SweepAxes::default()), &mut p);

        if let Some(id) = &experiment_id {
            if id.is_empty() || id.contains(['/', '\\', ',', '\n']) {
                p.push(format!(
                    "experiment_id `{id}` must be non-empty without / \\ , or newlines"
                ));
            }
        }
        if let Some(m) = &modality {
            p.extend(m.problems());
        }
        if repetitions == Some(0) {
            p.push("repetitions must be at least 1".into());
        }
        if let Some(t) = &training {
            p.extend(t.problems().into_iter().map(|s| format!("training: {s}")));
        }
        if evaluation.as_ref().is_some_and(|e| e.subspace_dim == 0) {
            p.push("evaluation: subspace_dim must be at least 1".into());
        }
        if evaluation.as_ref().is_some_and(|e| e.test_k.contains(&0)) {
            p.push("evaluation: test_k values must be at least 1".into());
        }
        if let Some(s) = &sweep {
            if s.k.contains(&0) {
                p.push("sweep: k values must be at least 1".into());
            }
            if s.train_categories.contains(&0) {
                p.push("sweep: train_categories values must be at least 1".into());
            }
        }
        match &split {
            Some(SplitSpec::Explicit { train, test }) if train.is_empty() || test.is_empty() => {
                p.push("split: train and test lists must be non-empty".into())
            }
            Some(SplitSpec::Random { train, test }) if *train == 0 || *test == 0 => {
                p.push("split: train and test counts must be at least 1".into())
            }
            Some(SplitSpec::HeldOutGroups { groups: 0 }) => {
                p.push("split: held_out_groups must be at least 1".into())
            }
            _ => {}
        }
        let needs_grouping = matches!(split, Some(SplitSpec::HeldOutGroups { .. }))
            || modality.is_some_and(|m| m.kind == ModalityKind::CoarseFusion);
        if needs_grouping && grouping.as_ref().is_some_and(Option::is_none) {
            p.push("`grouping` is required for coarse_fusion and held_out_groups".into());
        }
        if !p.is_empty() {
            return Err(Error::Config(p));
        }
        Ok(ExperimentConfig {
            experiment_id: experiment_id.expect("checked"),
            manifest: manifest.expect("checked"),
            grouping: grouping.expect("checked"),
            split: split.expect("checked"),
            modality: modality.expect("checked"),
            seed: seed.expect("checked"),
            repetitions: repetitions.expect("checked"),
            training: training.expect("checked"),
            evaluation: evaluation.expect("checked"),
            sweep: sweep.expect("checked"),
        })
    }

    /// Reads a config file; relative data paths resolve against its folder.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.grouping = cfg.grouping.map(|g| base.join(g));
        Ok(cfg)
    }
}

/// One line of the per-repetition results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub category: String,
    pub repetition: usize,
    pub metric_name: String,
    pub value: f64,
}

/// Mean of a metric over repetitions, per category and over everything
/// (`category = "all"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub category: String,
    pub metric_name: String,
    pub mean: f64,
    pub count: usize,
}

pub struct SweepRun {
    pub experiment_id: String,
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
}

pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<SweepRun>,
}

impl ExperimentReport {
    pub fn mean(&self, experiment_id: &str, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| {
                r.experiment_id == experiment_id && r.category == "all" && r.metric_name == metric
            })
            .map(|r| r.mean)
    }

    /// Writes `results.csv`, `summary.csv`, and one checkpoint and training
    /// log per sweep point under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("results.csv"), &self.rows)?;
        write_csv(&dir.join("summary.csv"), &self.summary)?;
        for run in &self.runs {
            let slug = slug(&run.experiment_id);
            run.checkpoint
                .save(dir.join("checkpoints").join(format!("{slug}.json")))?;
            let log_path = dir.join("logs").join(format!("{slug}.json"));
            fs::create_dir_all(log_path.parent().expect("has parent"))
                .map_err(|e| Error::io(&log_path, e))?;
            let json = serde_json::to_string_pretty(&run.log).expect("log serializes");
            fs::write(&log_path, json + "\n").map_err(|e| Error::io(&log_path, e))?;
        }
        Ok(())
    }
}

fn slug(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("checked io kind"),
        }
    } else {
        Error::parse(path, e.to_string())
    }
}

/// Means per (experiment, category, metric) and per (experiment, metric),
/// in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut acc: HashMap<(String, String, String), (f64, usize)> = HashMap::new();
    for r in rows {
        for cat in [r.category.as_str(), "all"] {
            let key = (
                r.experiment_id.clone(),
                cat.to_string(),
                r.metric_name.clone(),
            );
            let e = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0.0, 0)
            });
            e.0 += r.value;
            e.1 += 1;
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (sum, count) = acc[&key];
            SummaryRow {
                experiment_id: key.0,
                category: key.1,
                metric_name: key.2,
                mean: sum / count as f64,
                count,
            }
        })
        .collect()
}

pub fn resolve_split(
    spec: &SplitSpec,
    manifest: &Manifest,
    grouping: Option<&CoarseGrouping>,
    stream: &mut RandomStream,
) -> Result<CategorySplit> {
    match spec {
        SplitSpec::Explicit { train, test } => {
            for c in train.iter().chain(test) {
                if !manifest.categories().contains(c) {
                    return Err(Error::Argument(format!(
                        "split names unknown category `{c}`"
                    )));
                }
            }
            CategorySplit::new(train.clone(), test.clone())
        }
        SplitSpec::Random { train, test } => {
            CategorySplit::random(manifest.categories(), *train, *test, stream)
        }
        SplitSpec::HeldOutGroups { groups } => {
            let g = grouping
                .ok_or_else(|| Error::Argument("held_out_groups split needs a grouping".into()))?;
            let ids = g.group_ids();
            if *groups >= ids.len() {
                return Err(Error::Capacity(format!(
                    "cannot hold out {groups} of {} coarse groups",
                    ids.len()
                )));
            }
            let mut held: Vec<usize> = stream.sample_indices(ids.len(), *groups);
            held.sort_unstable();
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (i, id) in ids.iter().enumerate() {
                let members = g.members(id).expect("listed").iter().cloned();
                if held.contains(&i) {
                    test.extend(members);
                } else {
                    train.extend(members);
                }
            }
            CategorySplit::new(train, test)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stratum {
    All,
    Bottom,
    Middle,
    Top,
}

impl Stratum {
    fn label(self) -> &'static str {
        match self {
            Stratum::All => "all",
            Stratum::Bottom => "bottom",
            Stratum::Middle => "middle",
            Stratum::Top => "top",
        }
    }
}

/// Sketch indices of each category restricted to one quality third
/// (ascending quality, ties by record order).
fn quality_pool(
    manifest: &Manifest,
    categories: &[String],
    stratum: Stratum,
) -> Result<HashMap<String, Vec<usize>>> {
    let mut out = HashMap::new();
    for c in categories {
        let mut idx = manifest.indices(c, Domain::Sketch).to_vec();
        let mut keyed = Vec::with_capacity(idx.len());
        for &i in &idx {
            let q = manifest.record(i).quality.ok_or_else(|| {
                Error::Argument(format!(
                    "quality sweep needs quality scores; sketch `{}` has none",
                    manifest.record(i).sample_id
                ))
            })?;
            keyed.push((q, i));
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = keyed.len();
        let (lo, hi) = match stratum {
            Stratum::All => (0, n),
            Stratum::Bottom => (0, n / 3),
            Stratum::Middle => (n / 3, 2 * n / 3),
            Stratum::Top => (2 * n / 3, n),
        };
        idx = keyed[lo..hi].iter().map(|p| p.1).collect();
        out.insert(c.clone(), idx);
    }
    Ok(out)
}

struct EvalContext<'a> {
    config: &'a ExperimentConfig,
    manifest: &'a Manifest,
    grouping: Option<&'a CoarseGrouping>,
    split: &'a CategorySplit,
    trained: &'a TrainingOutput,
    modality: InputModality,
    alignment: Option<SubspaceAlignment>,
}

fn fit_alignment(
    manifest: &Manifest,
    split: &CategorySplit,
    dim: usize,
) -> Option<SubspaceAlignment> {
    let (ds, dp) = (manifest.dim(Domain::Sketch)?, manifest.dim(Domain::Photo)?);
    if ds != dp {
        return None;
    }
    let gather = |d: Domain| -> Vec<&[f64]> {
        split
            .train()
            .iter()
            .flat_map(|c| manifest.vectors(c, d))
            .collect()
    };
    let (src, tgt) = (gather(Domain::Sketch), gather(Domain::Photo));
    let k = dim
        .min(ds)
        .min(src.len().saturating_sub(1))
        .min(tgt.len().saturating_sub(1));
    SubspaceAlignment::fit(&src, &tgt, k).ok()
}

fn scores_of(weights: &[f64], photos: &[&[f64]]) -> Vec<f64> {
    photos.iter().map(|p| augmented_score(weights, p)).collect()
}

impl EvalContext<'_> {
    fn ap(&self, scores: Vec<f64>, labels: &[bool]) -> Result<f64> {
        average_precision_with(
            &RankedResult::new(scores, labels.to_vec())?,
            self.config.evaluation.ap_mode,
        )
    }

    fn binary_rows(
        &self,
        id: &str,
        category_index: usize,
        rep: usize,
        sources: &InputSources<'_>,
        stream: &mut RandomStream,
    ) -> Result<Vec<ResultRow>> {
        let test = self.split.test();
        let category = &test[category_index];
        let group = self.grouping.and_then(|g| g.group_of(category));
        let coarse = group
            .and_then(|g| self.trained.ground_truth.coarse.get(g))
            .map(Vec::as_slice);
        let c_reg = self.config.training.ground_truth_c;
        let built = build_binary_input(&self.modality, sources, category, coarse, c_reg, stream)?;
        let model = match synthesize_classifier(&self.trained.checkpoint, &built.values, None)? {
            LinearModel::Binary(m) => m,
            LinearModel::MultiClass(_) => unreachable!("binary modality"),
        };

        // Evaluation conditions: every test photo, and with a grouping also
        // only the photos of the category's own coarse group.
        let mut conditions: Vec<(&str, Vec<&String>)> = Vec::new();
        match (self.grouping, group) {
            (Some(g), Some(gid)) => {
                conditions.push(("_coarse_unknown", test.iter().collect()));
                let members = g.members(gid).expect("group of a member");
                conditions.push((
                    "_coarse_known",
                    test.iter().filter(|c| members.contains(c)).collect(),
                ));
            }
            _ => conditions.push(("", test.iter().collect())),
        }
        let sketches: &[Vec<f64>] = &built.sketches[0];
        let baselines = self.config.evaluation.baselines;
        let mut rows = Vec::new();
        let mut push = |metric: String, value: f64| {
            rows.push(ResultRow {
                experiment_id: id.to_string(),
                category: category.clone(),
                repetition: rep,
                metric_name: metric,
                value,
            })
        };
        for (suffix, cats) in conditions {
            let mut photos: Vec<&[f64]> = Vec::new();
            let mut labels = Vec::new();
            for c in cats {
                for v in self.manifest.vectors(c, Domain::Photo) {
                    photos.push(v);
                    labels.push(c == category);
                }
            }
            push(
                format!("ap{suffix}"),
                self.ap(scores_of(model.weights(), &photos), &labels)?,
            );
            if !baselines {
                continue;
            }
            let same_dim = sketches.first().is_some_and(|s| s.len() == photos[0].len());
            if same_dim {
                let nn = photos
                    .iter()
                    .map(|p| nn_score(p, sketches))
                    .collect::<Result<Vec<_>>>()?;
                push(format!("nn_ap{suffix}"), self.ap(nn, &labels)?);
                if let Some(sa) = &self.alignment {
                    let aligned: Vec<Vec<f64>> = sketches
                        .iter()
                        .map(|s| sa.transform_source(s))
                        .collect::<Result<_>>()?;
                    let scores = photos
                        .iter()
                        .map(|p| nn_score(&sa.transform_target(p)?, &aligned))
                        .collect::<Result<Vec<_>>>()?;
                    push(format!("sa_nn_ap{suffix}"), self.ap(scores, &labels)?);
                }
            }
            if self.modality.kind == ModalityKind::ModelToModelBinary
                && built.values.rows() == photos[0].len() + 1
            {
                let raw = scores_of(built.values.data(), &photos);
                push(format!("raw_svm_ap{suffix}"), self.ap(raw, &labels)?);
            }
        }
        Ok(rows)
    }

    fn multiclass_rows(
        &self,
        id: &str,
        rep: usize,
        sources: &InputSources<'_>,
        stream: &mut RandomStream,
    ) -> Result<Vec<ResultRow>> {
        let test = self.split.test();
        let c = self.modality.c;
        if test.len() < c {
            return Err(Error::Capacity(format!(
                "{c}-way evaluation needs {c} test categories, split has {}",
                test.len()
            )));
        }
        let group: Vec<String> = stream
            .sample_indices(test.len(), c)
            .into_iter()
            .map(|i| test[i].clone())
            .collect();
        let c_reg = self.config.training.ground_truth_c;
        let built: BuiltInput =
            build_multiclass_input(&self.modality, sources, &group, c_reg, stream)?;
        let model =
            match synthesize_classifier(&self.trained.checkpoint, &built.values, Some(&group))? {
                LinearModel::MultiClass(m) => m,
                LinearModel::Binary(_) => unreachable!("multiclass modality"),
            };
        let mut photos: Vec<&[f64]> = Vec::new();
        let mut truth = Vec::new();
        for (j, cat) in group.iter().enumerate() {
            for v in self.manifest.vectors(cat, Domain::Photo) {
                photos.push(v);
                truth.push(j);
            }
        }
        if photos.is_empty() {
            return Err(Error::UndefinedMetric(
                "no test photos for the group".into(),
            ));
        }
        let accuracy = |predict: &dyn Fn(&[f64]) -> Result<usize>| -> Result<f64> {
            let mut hits = 0usize;
            for (p, &t) in photos.iter().zip(&truth) {
                if predict(p)? == t {
                    hits += 1;
                }
            }
            Ok(hits as f64 / photos.len() as f64)
        };
        let mut metrics = vec![("accuracy", accuracy(&|x| Ok(argmax(&model.scores(x)?)))?)];
        if self.config.evaluation.baselines {
            if built.sketches[0][0].len() == photos[0].len() {
                metrics.push((
                    "nn_accuracy",
                    accuracy(&|x| nn_classify(x, &built.sketches))?,
                ));
                if let Some(sa) = &self.alignment {
                    let aligned: Vec<Vec<Vec<f64>>> = built
                        .sketches
                        .iter()
                        .map(|set| set.iter().map(|s| sa.transform_source(s)).collect())
                        .collect::<Result<_>>()?;
                    metrics.push((
                        "sa_nn_accuracy",
                        accuracy(&|x| nn_classify(&sa.transform_target(x)?, &aligned))?,
                    ));
                }
            }
            if self.modality.kind == ModalityKind::ModelToModelMulticlass {
                let raw = MultiClassLinearModel::new(built.values.clone(), group.clone())?;
                metrics.push((
                    "raw_svm_accuracy",
                    accuracy(&|x| Ok(argmax(&raw.scores(x)?)))?,
                ));
            }
        }
        let label = group.join("+");
        Ok(metrics
            .into_iter()
            .map(|(m, v)| ResultRow {
                experiment_id: id.to_string(),
                category: label.clone(),
                repetition: rep,
                metric_name: m.to_string(),
                value: v,
            })
            .collect())
    }

    fn evaluate(&self, id: &str, stratum: Stratum, seed: u64) -> Result<Vec<ResultRow>> {
        let pool = match stratum {
            Stratum::All => None,
            s => Some(quality_pool(self.manifest, self.split.test(), s)?),
        };
        let sources = InputSources {
            negatives: self.config.training.negatives,
            svm_epochs: self.config.training.svm_epochs,
            sketch_pool: pool.as_ref(),
            ..InputSources::new(self.manifest, self.split.train())
        };
        let root = RandomStream::new(seed);
        let reps = self.config.repetitions;
        let chunks: Vec<Vec<ResultRow>> = if self.modality.kind.is_multiclass() {
            (0..reps)
                .into_par_iter()
                .map(|rep| self.multiclass_rows(id, rep, &sources, &mut root.child(rep as u64)))
                .collect::<Result<_>>()?
        } else {
            let jobs: Vec<(usize, usize)> = (0..self.split.test().len())
                .flat_map(|c| (0..reps).map(move |r| (c, r)))
                .collect();
            jobs.par_iter()
                .map(|&(c, rep)| {
                    let mut stream = root.child(c as u64).child(rep as u64);
                    self.binary_rows(id, c, rep, &sources, &mut stream)
                })
                .collect::<Result<_>>()?
        };
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Runs every sweep point of `config`: one regressor per (k, train count),
/// evaluated on the held-out categories with fresh sketches per repetition.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    manifest: &Manifest,
    grouping: Option<&CoarseGrouping>,
) -> Result<ExperimentReport> {
    let root = RandomStream::new(config.seed);
    let base = resolve_split(
        &config.split,
        manifest,
        grouping,
        &mut root.child(STREAM_SPLIT),
    )?;
    let ks: Vec<usize> = if config.sweep.k.is_empty() {
        vec![config.modality.k]
    } else {
        config.sweep.k.clone()
    };
    let counts: Vec<Option<usize>> = if config.sweep.train_categories.is_empty() {
        vec![None]
    } else {
        config
            .sweep
            .train_categories
            .iter()
            .copied()
            .map(Some)
            .collect()
    };
    let strata: &[Stratum] = if config.sweep.quality {
        &[Stratum::Bottom, Stratum::Middle, Stratum::Top]
    } else {
        &[Stratum::All]
    };

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (ki, &k) in ks.iter().enumerate() {
        for &count in &counts {
            let split = match count {
                None => base.clone(),
                Some(n) => {
                    base.with_train_subset(n, &mut root.child(STREAM_SUBSET).child(n as u64))?
                }
            };
            let mut id = config.experiment_id.clone();
            if !config.sweep.k.is_empty() {
                id.push_str(&format!("/k={k}"));
            }
            if let Some(n) = count {
                id.push_str(&format!("/train={n}"));
            }
            let modality = InputModality {
                k,
                ..config.modality
            };
            let run = TrainingRun {
                modality,
                split: split.clone(),
                settings: config.training.clone(),
                seed: root.child(STREAM_TRAIN).child(ki as u64).seed(),
                grouping: grouping.cloned(),
            };
            info!("training {id}");
            let trained = train_regressor(&run, manifest)?;
            let alignment = if config.evaluation.baselines {
                fit_alignment(manifest, &split, config.evaluation.subspace_dim)
            } else {
                None
            };
            let test_ks: Vec<Option<usize>> = if config.evaluation.test_k.is_empty() {
                vec![None]
            } else {
                config.evaluation.test_k.iter().copied().map(Some).collect()
            };
            for test_k in test_ks {
                let ctx = EvalContext {
                    config,
                    manifest,
                    grouping,
                    split: &split,
                    trained: &trained,
                    modality: InputModality {
                        k: test_k.unwrap_or(k),
                        ..modality
                    },
                    alignment: alignment.clone(),
                };
                let test_id = match test_k {
                    Some(t) => format!("{id}/test_k={t}"),
                    None => id.clone(),
                };
                for &stratum in strata {
                    let eval_id = if stratum == Stratum::All {
                        test_id.clone()
                    } else {
                        format!("{test_id}/quality={}", stratum.label())
                    };
                    info!("evaluating {eval_id}");
                    let seed = root.child(STREAM_EVAL).child(ki as u64).seed();
                    rows.extend(ctx.evaluate(&eval_id, stratum, seed)?);
                }
            }
            runs.push(SweepRun {
                experiment_id: id,
                checkpoint: trained.checkpoint,
                log: trained.log,
            });
        }
    }
    let summary = summarize(&rows);
    Ok(ExperimentReport {
        rows,
        summary,
        runs,
    })
}

/// Loads the manifest and grouping named by `config` and runs it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let manifest = Manifest::load(&config.manifest)?;
    let grouping = match &config.grouping {
        Some(p) => Some(CoarseGrouping::load(p)?),
        None => None,
    };
    run_experiment_on(config, &manifest, grouping.as_ref())
}

/// Per-metric means keyed by experiment id, for quick inspection.
pub fn means_by_experiment(summary: &[SummaryRow]) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in summary.iter().filter(|r| r.category == "all") {
        out.entry(r.experiment_id.clone())
            .or_default()
            .insert(r.metric_name.clone(), r.mean);
    }
    out
}
