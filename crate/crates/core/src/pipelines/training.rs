use std::collections::BTreeMap;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CategorySplit, CoarseGrouping, Domain, Manifest};
use crate::error::{Error, Result};
use crate::losses::{
    combined_objective, cross_entropy_weights, hinge_loss_weights, one_hot, regression_loss_with,
    LossWeights, RegressionNorm,
};
use crate::numeric::{DenseMatrix, RandomStream};
use crate::pipelines::modality::{
    build_binary_input, build_multiclass_input, DomainDims, InputModality, InputSources,
};
use crate::regnet::{
    AdamConfig, AdamState, BatchNormConfig, Checkpoint, ConvConfig, ConvRegressor, MlpConfig,
    MlpRegressor, Regressor,
};
use crate::svm::{train_binary_svm, train_multiclass_svm, SvmConfig, C_GRID};

/// Stream indices under the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_TRUTH: u64 = 2;
const STREAM_INPUTS: u64 = 3;
const STREAM_BATCHES: u64 = 4;
const STREAM_PROBE: u64 = 5;
const STREAM_COARSE: u64 = 6;

/// Where the negative photos of binary ground-truth classifiers and
/// performance batches come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScope {
    /// Any other train category.
    #[default]
    AllCategories,
    /// Other train categories of the same coarse group (fine-grained targets).
    SameGroup,
}

/// Optimization and data settings shared by every modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    /// Inputs per train category (binary) or random groups (multiclass).
    pub ensembles: usize,
    pub loss_weights: LossWeights,
    pub regression_norm: RegressionNorm,
    pub adam: AdamConfig,
    /// Defaults to 64 for binary and 16 for multiclass modalities.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub hidden: usize,
    pub kernel_m: usize,
    pub leaky_slope: f64,
    pub batch_norm: BatchNormConfig,
    /// Negative sketches per few-shot sketch classifier.
    pub negatives: usize,
    /// Negative photos per ground-truth photo classifier; with
    /// `SameGroup` scope this is an upper bound.
    pub photo_negatives: usize,
    pub negative_scope: NegativeScope,
    pub svm_epochs: usize,
    pub ground_truth_c: f64,
    /// Regularization values cycled through when building inputs.
    pub c_grid: Vec<f64>,
    /// Positive photos (binary) or photos per class (multiclass) in each
    /// performance-loss batch.
    pub perf_photos: usize,
    /// Photos of a coarse group used to train its coarse classifier.
    pub coarse_photos: usize,
    /// Regularization of the coarse classifiers.
    pub coarse_c: f64,
    /// Held-in pairs evaluated before training and after each epoch.
    pub probe_size: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings {
            ensembles: 500,
            loss_weights: LossWeights::default(),
            regression_norm: RegressionNorm::default(),
            adam: AdamConfig::default(),
            batch_size: None,
            epochs: 20,
            hidden: 512,
            kernel_m: 3,
            leaky_slope: 0.01,
            batch_norm: BatchNormConfig::default(),
            negatives: 600,
            photo_negatives: 600,
            negative_scope: NegativeScope::AllCategories,
            svm_epochs: 50,
            ground_truth_c: 1.0,
            c_grid: C_GRID.to_vec(),
            perf_photos: 16,
            coarse_photos: 250,
            coarse_c: 1.0,
            probe_size: 64,
        }
    }
}

impl TrainingSettings {
    pub fn batch_size_for(&self, modality: &InputModality) -> usize {
        self.batch_size.unwrap_or(if modality.kind.is_multiclass() {
            16
        } else {
            64
        })
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.ensembles == 0 {
            p.push("ensembles must be at least 1".into());
        }
        if let Err(e) = self.loss_weights.validate() {
            p.push(e.to_string());
        }
        if let Err(Error::Config(more)) = self.adam.validate() {
            p.extend(more);
        }
        if self.batch_size.is_some_and(|b| b < 2) {
            p.push("batch_size must be at least 2 for batch statistics".into());
        }
        if self.epochs == 0 {
            p.push("epochs must be at least 1".into());
        }
        if self.hidden == 0 {
            p.push("hidden width must be positive".into());
        }
        if self.kernel_m.is_multiple_of(2) {
            p.push(format!("kernel_m must be odd, got {}", self.kernel_m));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            p.push(format!(
                "leaky_slope must be non-negative, got {}",
                self.leaky_slope
            ));
        }
        if !(0.0..1.0).contains(&self.batch_norm.momentum) || !(self.batch_norm.eps > 0.0) {
            p.push("batch_norm needs momentum in [0, 1) and positive eps".into());
        }
        if self.svm_epochs == 0 {
            p.push("svm_epochs must be at least 1".into());
        }
        if !(self.ground_truth_c > 0.0 && self.ground_truth_c.is_finite()) {
            p.push(format!(
                "ground_truth_c must be positive, got {}",
                self.ground_truth_c
            ));
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            p.push("c_grid must be a non-empty list of positive values".into());
        }
        if self.perf_photos == 0 {
            p.push("perf_photos must be at least 1".into());
        }
        if !(self.coarse_c > 0.0 && self.coarse_c.is_finite()) {
            p.push(format!("coarse_c must be positive, got {}", self.coarse_c));
        }
        if self.coarse_photos == 0 {
            p.push("coarse_photos must be at least 1".into());
        }
        if self.probe_size == 1 {
            p.push("probe_size must be 0 or at least 2".into());
        }
        p
    }
}

/// One regressor training job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub modality: InputModality,
    pub split: CategorySplit,
    #[serde(default)]
    pub settings: TrainingSettings,
    pub seed: u64,
    /// Required by coarse fusion.
    #[serde(default)]
    pub grouping: Option<CoarseGrouping>,
}

impl TrainingRun {
    pub fn new(modality: InputModality, split: CategorySplit, seed: u64) -> Self {
        TrainingRun {
            modality,
            split,
            settings: TrainingSettings::default(),
            seed,
            grouping: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = self.modality.problems();
        p.extend(self.settings.problems());
        if self.modality.kind == crate::pipelines::ModalityKind::CoarseFusion {
            match &self.grouping {
                None => p.push("coarse_fusion requires a coarse grouping".into()),
                Some(g) => {
                    for c in self.split.train() {
                        if g.group_of(c).is_none() {
                            p.push(format!("train category `{c}` belongs to no coarse group"));
                        }
                    }
                }
            }
        }
        if self.settings.negative_scope == NegativeScope::SameGroup
            && !self.modality.kind.is_multiclass()
        {
            match &self.grouping {
                None => p.push("same_group negative scope requires a coarse grouping".into()),
                Some(g) => {
                    for c in self.split.train() {
                        if negative_pool(self, g, c).is_empty() {
                            p.push(format!(
                                "train category `{c}` has no train sibling in its coarse group"
                            ));
                        }
                    }
                }
            }
        }
        if self.modality.kind.is_multiclass() && self.split.train().len() < self.modality.c {
            p.push(format!(
                "{}-way groups need at least {} train categories, split has {}",
                self.modality.c,
                self.modality.c,
                self.split.train().len()
            ));
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub regression: f64,
    pub performance: f64,
    pub combined: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's minibatches.
    pub train: LossBreakdown,
    /// Fixed held-in probe set after the epoch.
    pub probe: Option<LossBreakdown>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub pairs: usize,
    pub steps: u64,
    pub initial_probe: Option<LossBreakdown>,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn final_probe(&self) -> Option<&LossBreakdown> {
        self.epochs.last().and_then(|e| e.probe.as_ref())
    }
}

/// Photo classifiers the regressor is trained to reproduce.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    /// Many-shot binary photo classifier per train category.
    pub binary: BTreeMap<String, Vec<f64>>,
    /// Coarse photo classifier per coarse group.
    pub coarse: BTreeMap<String, Vec<f64>>,
}

pub struct TrainingOutput {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
    pub ground_truth: GroundTruth,
}

/// Record indices of every photo outside `category` among `pool`.
fn photos_outside(manifest: &Manifest, category: &str, pool: &[String]) -> Vec<usize> {
    pool.iter()
        .filter(|c| c.as_str() != category)
        .flat_map(|c| manifest.indices(c, Domain::Photo).iter().copied())
        .collect()
}

/// Train categories that may supply negatives for `category`.
fn negative_pool(run: &TrainingRun, grouping: &CoarseGrouping, category: &str) -> Vec<String> {
    let siblings = grouping
        .group_of(category)
        .and_then(|g| grouping.members(g))
        .unwrap_or(&[]);
    run.split
        .train()
        .iter()
        .filter(|c| c.as_str() != category && siblings.contains(c))
        .cloned()
        .collect()
}

fn vectors_at<'a>(manifest: &'a Manifest, idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter()
        .map(|&i| manifest.record(i).vector.as_slice())
        .collect()
}

/// Binary photo classifier: every photo of `category` against
/// `negatives` photos drawn from the other categories of `pool`.
pub fn photo_model(
    manifest: &Manifest,
    category: &str,
    pool: &[String],
    negatives: usize,
    svm: &SvmConfig,
    stream: &mut RandomStream,
) -> Result<Vec<f64>> {
    let positives = manifest.vectors(category, Domain::Photo);
    if positives.is_empty() {
        return Err(Error::Capacity(format!(
            "category `{category}` has no photos"
        )));
    }
    let others = photos_outside(manifest, category, pool);
    if others.len() < negatives {
        return Err(Error::Capacity(format!(
            "ground truth for `{category}` needs {negatives} negative photos, {} available",
            others.len()
        )));
    }
    let pick: Vec<usize> = stream
        .sample_indices(others.len(), negatives)
        .into_iter()
        .map(|i| others[i])
        .collect();
    Ok(train_binary_svm(&positives, &vectors_at(manifest, &pick), svm)?.into_weights())
}

/// One-vs-rest photo classifier over an ordered group; all photos of each
/// class are used.
pub fn photo_group_model(
    manifest: &Manifest,
    group: &[String],
    svm: &SvmConfig,
) -> Result<DenseMatrix> {
    let per_class: Vec<(String, Vec<&[f64]>)> = group
        .iter()
        .map(|c| (c.clone(), manifest.vectors(c, Domain::Photo)))
        .collect();
    Ok(train_multiclass_svm(&per_class, svm)?.weights().clone())
}

/// Coarse photo classifier per group: up to `photos` photos of the group
/// against as many photos of other groups.
pub fn coarse_models(
    manifest: &Manifest,
    grouping: &CoarseGrouping,
    photos: usize,
    svm_epochs: usize,
    c_reg: f64,
    seed: u64,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let root = RandomStream::new(seed).child(STREAM_COARSE);
    let ids: Vec<String> = grouping.group_ids().into_iter().map(String::from).collect();
    let models = ids
        .par_iter()
        .enumerate()
        .map(|(gi, g)| {
            let mut stream = root.child(gi as u64);
            let members = grouping.members(g).expect("listed group");
            let inside: Vec<usize> = members
                .iter()
                .flat_map(|c| manifest.indices(c, Domain::Photo).iter().copied())
                .collect();
            let outside: Vec<usize> = grouping
                .groups()
                .iter()
                .filter(|(other, _)| *other != g)
                .flat_map(|(_, cs)| cs.iter())
                .flat_map(|c| manifest.indices(c, Domain::Photo).iter().copied())
                .collect();
            let n = photos.min(inside.len()).min(outside.len());
            if n == 0 {
                return Err(Error::Capacity(format!(
                    "coarse group `{g}` has {} photos and {} outside photos",
                    inside.len(),
                    outside.len()
                )));
            }
            let pos: Vec<usize> = stream
                .sample_indices(inside.len(), n)
                .into_iter()
                .map(|i| inside[i])
                .collect();
            let neg: Vec<usize> = stream
                .sample_indices(outside.len(), n)
                .into_iter()
                .map(|i| outside[i])
                .collect();
            let cfg = SvmConfig {
                c_reg,
                epochs: svm_epochs,
                seed: stream.next_u64(),
            };
            let w = train_binary_svm(
                &vectors_at(manifest, &pos),
                &vectors_at(manifest, &neg),
                &cfg,
            )?;
            Ok((g.clone(), w.into_weights()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(models.into_iter().collect())
}

/// A regression example: network input, target classifier, and the
/// categories whose photos form its performance-loss batch.
struct Pair {
    input: DenseMatrix,
    target: DenseMatrix,
    classes: Vec<usize>,
}

struct PhotoIndex {
    /// Photo record indices per train category.
    own: Vec<Vec<usize>>,
    /// Photo record indices of all other train categories.
    others: Vec<Vec<usize>>,
}

impl PhotoIndex {
    fn new(manifest: &Manifest, train: &[String]) -> Self {
        PhotoIndex {
            own: train
                .iter()
                .map(|c| manifest.indices(c, Domain::Photo).to_vec())
                .collect(),
            others: train
                .iter()
                .map(|c| photos_outside(manifest, c, train))
                .collect(),
        }
    }

    fn with_pools(manifest: &Manifest, train: &[String], pools: Vec<Vec<String>>) -> Self {
        PhotoIndex {
            own: train
                .iter()
                .map(|c| manifest.indices(c, Domain::Photo).to_vec())
                .collect(),
            others: train
                .iter()
                .zip(&pools)
                .map(|(c, pool)| photos_outside(manifest, c, pool))
                .collect(),
        }
    }
}

/// A sampled performance-loss batch for one pair.
enum PerfBatch<'a> {
    Binary {
        photos: Vec<&'a [f64]>,
        labels: Vec<f64>,
    },
    Multi {
        photos: Vec<&'a [f64]>,
        labels: DenseMatrix,
    },
}

fn sample_perf<'a>(
    manifest: &'a Manifest,
    index: &PhotoIndex,
    pair: &Pair,
    per_class: usize,
    stream: &mut RandomStream,
) -> PerfBatch<'a> {
    let draw = |pool: &[usize], n: usize, stream: &mut RandomStream| -> Vec<&'a [f64]> {
        let n = n.min(pool.len());
        stream
            .sample_indices(pool.len(), n)
            .into_iter()
            .map(|i| manifest.record(pool[i]).vector.as_slice())
            .collect()
    };
    if pair.classes.len() == 1 {
        let c = pair.classes[0];
        let mut photos = draw(&index.own[c], per_class, stream);
        let n_pos = photos.len();
        photos.extend(draw(&index.others[c], n_pos, stream));
        let mut labels = vec![1.0; n_pos];
        labels.resize(photos.len(), -1.0);
        PerfBatch::Binary { photos, labels }
    } else {
        let mut photos = Vec::new();
        let mut classes = Vec::new();
        for (j, &c) in pair.classes.iter().enumerate() {
            let p = draw(&index.own[c], per_class, stream);
            classes.extend(std::iter::repeat_n(j, p.len()));
            photos.extend(p);
        }
        let labels = one_hot(&classes, pair.classes.len());
        PerfBatch::Multi { photos, labels }
    }
}

/// Performance loss and its gradient with respect to the predicted weights.
fn perf_loss(predicted: &DenseMatrix, batch: &PerfBatch<'_>) -> Result<(f64, DenseMatrix)> {
    match batch {
        PerfBatch::Binary { photos, labels } => {
            let (l, g) = hinge_loss_weights(predicted.data(), photos, labels)?;
            Ok((l, DenseMatrix::new(predicted.rows(), predicted.cols(), g)?))
        }
        PerfBatch::Multi { photos, labels } => cross_entropy_weights(predicted, photos, labels),
    }
}

enum Net {
    Mlp(MlpRegressor),
    Conv(ConvRegressor),
}

impl Net {
    /// Train-mode forward over `pairs[idx]`; `update` folds batch statistics
    /// into the running estimates.
    fn forward(
        &mut self,
        pairs: &[Pair],
        idx: &[usize],
        update: bool,
    ) -> Result<(Vec<DenseMatrix>, Cache)> {
        match self {
            Net::Mlp(net) => {
                let width = pairs[idx[0]].input.rows();
                let mut data = Vec::with_capacity(idx.len() * width);
                for &i in idx {
                    data.extend_from_slice(pairs[i].input.data());
                }
                let x = DenseMatrix::new(idx.len(), width, data)?;
                let (y, cache) = if update {
                    net.forward_train(&x)?
                } else {
                    net.forward_batch(&x)?
                };
                let outs = (0..y.rows())
                    .map(|r| DenseMatrix::new(y.cols(), 1, y.row(r).to_vec()))
                    .collect::<Result<_>>()?;
                Ok((outs, Cache::Mlp(cache)))
            }
            Net::Conv(net) => {
                let batch: Vec<DenseMatrix> = idx.iter().map(|&i| pairs[i].input.clone()).collect();
                let (y, cache) = if update {
                    net.forward_train(&batch)?
                } else {
                    net.forward_batch(&batch)?
                };
                Ok((y, Cache::Conv(cache)))
            }
        }
    }

    fn backward_and_step(
        &mut self,
        cache: &Cache,
        upstream: Vec<DenseMatrix>,
        adam: &mut AdamState,
    ) -> Result<()> {
        match (self, cache) {
            (Net::Mlp(net), Cache::Mlp(cache)) => {
                let cols = upstream[0].rows();
                let mut data = Vec::with_capacity(upstream.len() * cols);
                for u in &upstream {
                    data.extend_from_slice(u.data());
                }
                let up = DenseMatrix::new(upstream.len(), cols, data)?;
                let grads = net.backward(cache, &up)?;
                adam.step(&mut net.params_mut(), &grads.slices())
            }
            (Net::Conv(net), Cache::Conv(cache)) => {
                let grads = net.backward(cache, &upstream)?;
                adam.step(&mut net.params_mut(), &grads.slices())
            }
            _ => unreachable!("cache always comes from the same network"),
        }
    }

    fn param_sizes(&mut self) -> Vec<usize> {
        match self {
            Net::Mlp(n) => n.params_mut().iter().map(|p| p.len()).collect(),
            Net::Conv(n) => n.params_mut().iter().map(|p| p.len()).collect(),
        }
    }

    fn into_regressor(self) -> Regressor {
        match self {
            Net::Mlp(n) => Regressor::Mlp(n),
            Net::Conv(n) => Regressor::Conv(n),
        }
    }
}

enum Cache {
    Mlp(crate::regnet::MlpCache),
    Conv(crate::regnet::ConvCache),
}

/// Batch-mean losses of `outputs` and the upstream gradient of the combined
/// objective.
fn batch_losses(
    outputs: &[DenseMatrix],
    pairs: &[Pair],
    idx: &[usize],
    perf: &[PerfBatch<'_>],
    weights: LossWeights,
    norm: RegressionNorm,
) -> Result<(LossBreakdown, Vec<DenseMatrix>)> {
    let n = idx.len() as f64;
    let mut sum = LossBreakdown::default();
    let mut upstream = Vec::with_capacity(idx.len());
    for ((out, &i), batch) in outputs.iter().zip(idx).zip(perf) {
        let (lr, gr) = regression_loss_with(out.data(), pairs[i].target.data(), norm)?;
        let (lp, gp) = perf_loss(out, batch)?;
        sum.regression += lr / n;
        sum.performance += lp / n;
        let g: Vec<f64> = gr
            .iter()
            .zip(gp.data())
            .map(|(a, b)| (weights.alpha * a + weights.beta * b) / n)
            .collect();
        upstream.push(DenseMatrix::new(out.rows(), out.cols(), g)?);
    }
    sum.combined = combined_objective(sum.regression, sum.performance, weights);
    Ok((sum, upstream))
}

/// Trains one regressor for `run` against many-shot photo classifiers.
///
/// Every input, ground-truth model, and batch is drawn from streams split
/// off the run seed, so the checkpoint is a pure function of the run and
/// the manifest regardless of the worker count.
pub fn train_regressor(run: &TrainingRun, manifest: &Manifest) -> Result<TrainingOutput> {
    run.validate()?;
    let s = &run.settings;
    let modality = run.modality;
    let dims = DomainDims::of(manifest)?;
    let in_shape = modality.input_shape(dims)?;
    let out_shape = modality.output_shape(dims);
    let train = run.split.train();
    let root = RandomStream::new(run.seed);
    let gt_svm = |seed| SvmConfig {
        c_reg: s.ground_truth_c,
        epochs: s.svm_epochs,
        seed,
    };

    let mut ground_truth = GroundTruth::default();
    if modality.kind == crate::pipelines::ModalityKind::CoarseFusion {
        let grouping = run.grouping.as_ref().expect("validated");
        ground_truth.coarse = coarse_models(
            manifest,
            grouping,
            s.coarse_photos,
            s.svm_epochs,
            s.coarse_c,
            run.seed,
        )?;
    }

    let sources = InputSources {
        negatives: s.negatives,
        svm_epochs: s.svm_epochs,
        ..InputSources::new(manifest, train)
    };
    let inputs_root = root.child(STREAM_INPUTS);
    let pairs: Vec<Pair> = if modality.kind.is_multiclass() {
        (0..s.ensembles)
            .into_par_iter()
            .map(|e| {
                let mut stream = inputs_root.child(e as u64);
                let classes = stream.sample_indices(train.len(), modality.c);
                let group: Vec<String> = classes.iter().map(|&c| train[c].clone()).collect();
                let c_reg = s.c_grid[e % s.c_grid.len()];
                let built =
                    build_multiclass_input(&modality, &sources, &group, c_reg, &mut stream)?;
                let target = photo_group_model(manifest, &group, &gt_svm(stream.next_u64()))?;
                Ok(Pair {
                    input: built.values,
                    target,
                    classes,
                })
            })
            .collect::<Result<_>>()?
    } else {
        let truth_root = root.child(STREAM_TRUTH);
        ground_truth.binary = train
            .par_iter()
            .enumerate()
            .map(|(ci, c)| {
                let mut stream = truth_root.child(ci as u64);
                let cfg = gt_svm(stream.next_u64());
                let (pool, n) = match (s.negative_scope, run.grouping.as_ref()) {
                    (NegativeScope::SameGroup, Some(g)) => {
                        let pool = negative_pool(run, g, c);
                        let n = photos_outside(manifest, c, &pool)
                            .len()
                            .min(s.photo_negatives);
                        (pool, n)
                    }
                    _ => (train.to_vec(), s.photo_negatives),
                };
                photo_model(manifest, c, &pool, n, &cfg, &mut stream).map(|w| (c.clone(), w))
            })
            .collect::<Result<_>>()?;
        let grouping = run.grouping.as_ref();
        let jobs: Vec<(usize, usize)> = (0..train.len())
            .flat_map(|c| (0..s.ensembles).map(move |e| (c, e)))
            .collect();
        jobs.par_iter()
            .map(|&(ci, e)| {
                let c = &train[ci];
                let mut stream = inputs_root.child(ci as u64).child(e as u64);
                let coarse = grouping
                    .and_then(|g| g.group_of(c))
                    .and_then(|g| ground_truth.coarse.get(g))
                    .map(Vec::as_slice);
                let c_reg = s.c_grid[e % s.c_grid.len()];
                let built = build_binary_input(&modality, &sources, c, coarse, c_reg, &mut stream)?;
                let target = &ground_truth.binary[c];
                Ok(Pair {
                    input: built.values,
                    target: DenseMatrix::new(target.len(), 1, target.clone())?,
                    classes: vec![ci],
                })
            })
            .collect::<Result<_>>()?
    };
    if let Some(p) = pairs.iter().find(|p| p.input.shape() != in_shape) {
        return Err(Error::Shape(format!(
            "built input is {}x{}, network expects {}x{}",
            p.input.rows(),
            p.input.cols(),
            in_shape.0,
            in_shape.1
        )));
    }
    info!(
        "{}: {} training pairs over {} categories",
        modality.kind,
        pairs.len(),
        train.len()
    );

    let mut init = root.child(STREAM_INIT);
    let mut net = if modality.kind.is_multiclass() {
        Net::Conv(ConvRegressor::new(
            ConvConfig {
                kernel_m: s.kernel_m,
                leaky_slope: s.leaky_slope,
                batch_norm: s.batch_norm,
            },
            &mut init,
        )?)
    } else {
        let mut cfg = MlpConfig::new(in_shape.0, out_shape.0).with_hidden(s.hidden);
        cfg.leaky_slope = s.leaky_slope;
        cfg.batch_norm = s.batch_norm;
        Net::Mlp(MlpRegressor::new(cfg, &mut init))
    };
    let mut adam = AdamState::new(s.adam, &net.param_sizes());
    let index = match (s.negative_scope, run.grouping.as_ref()) {
        (NegativeScope::SameGroup, Some(g)) => PhotoIndex::with_pools(
            manifest,
            train,
            train.iter().map(|c| negative_pool(run, g, c)).collect(),
        ),
        _ => PhotoIndex::new(manifest, train),
    };

    let mut probe_stream = root.child(STREAM_PROBE);
    let probe_idx: Vec<usize> = if s.probe_size >= 2 && pairs.len() >= 2 {
        probe_stream.sample_indices(pairs.len(), s.probe_size.min(pairs.len()))
    } else {
        Vec::new()
    };
    let probe_perf: Vec<PerfBatch<'_>> = probe_idx
        .iter()
        .map(|&i| {
            sample_perf(
                manifest,
                &index,
                &pairs[i],
                s.perf_photos,
                &mut probe_stream,
            )
        })
        .collect();
    let probe = |net: &mut Net| -> Result<Option<LossBreakdown>> {
        if probe_idx.is_empty() {
            return Ok(None);
        }
        let (out, _) = net.forward(&pairs, &probe_idx, false)?;
        let (l, _) = batch_losses(
            &out,
            &pairs,
            &probe_idx,
            &probe_perf,
            s.loss_weights,
            s.regression_norm,
        )?;
        Ok(Some(l))
    };

    let mut log = TrainingLog {
        pairs: pairs.len(),
        steps: 0,
        initial_probe: probe(&mut net)?,
        epochs: Vec::with_capacity(s.epochs),
    };
    let batch_size = s.batch_size_for(&modality);
    let mut batch_stream = root.child(STREAM_BATCHES);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..s.epochs {
        batch_stream.shuffle(&mut order);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let perf: Vec<PerfBatch<'_>> = chunk
                .iter()
                .map(|&i| {
                    sample_perf(
                        manifest,
                        &index,
                        &pairs[i],
                        s.perf_photos,
                        &mut batch_stream,
                    )
                })
                .collect();
            let (out, cache) = net.forward(&pairs, chunk, true)?;
            let (losses, upstream) = batch_losses(
                &out,
                &pairs,
                chunk,
                &perf,
                s.loss_weights,
                s.regression_norm,
            )?;
            net.backward_and_step(&cache, upstream, &mut adam)?;
            sum.regression += losses.regression;
            sum.performance += losses.performance;
            sum.combined += losses.combined;
            batches += 1;
        }
        if batches > 0 {
            let b = batches as f64;
            sum.regression /= b;
            sum.performance /= b;
            sum.combined /= b;
        }
        let probe_loss = probe(&mut net)?;
        debug!(
            "epoch {epoch}: train {:.5} probe {:?}",
            sum.combined,
            probe_loss.as_ref().map(|p| p.combined)
        );
        log.epochs.push(EpochLog {
            epoch,
            train: sum,
            probe: probe_loss,
        });
    }
    log.steps = adam.step_count();
    Ok(TrainingOutput {
        checkpoint: Checkpoint {
            modality,
            input_shape: in_shape,
            output_shape: out_shape,
            regressor: net.into_regressor(),
        },
        log,
        ground_truth,
    })
}
