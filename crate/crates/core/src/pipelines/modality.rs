use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    average_features, sample_category, sample_few_shot, sample_records, Domain, Manifest,
};
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, RandomStream};
use crate::svm::{train_binary_svm, train_multiclass_svm, SvmConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    ModelToModelBinary,
    ModelToModelMulticlass,
    FeatureToModelBinary,
    FeatureToModelMulticlass,
    EmbeddingToModel,
    FeaturePlusEmbedding,
    CoarseFusion,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 7] = [
        ModalityKind::ModelToModelBinary,
        ModalityKind::ModelToModelMulticlass,
        ModalityKind::FeatureToModelBinary,
        ModalityKind::FeatureToModelMulticlass,
        ModalityKind::EmbeddingToModel,
        ModalityKind::FeaturePlusEmbedding,
        ModalityKind::CoarseFusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityKind::ModelToModelBinary => "model_to_model_binary",
            ModalityKind::ModelToModelMulticlass => "model_to_model_multiclass",
            ModalityKind::FeatureToModelBinary => "feature_to_model_binary",
            ModalityKind::FeatureToModelMulticlass => "feature_to_model_multiclass",
            ModalityKind::EmbeddingToModel => "embedding_to_model",
            ModalityKind::FeaturePlusEmbedding => "feature_plus_embedding",
            ModalityKind::CoarseFusion => "coarse_fusion",
        }
    }

    pub fn is_multiclass(self) -> bool {
        matches!(
            self,
            ModalityKind::ModelToModelMulticlass | ModalityKind::FeatureToModelMulticlass
        )
    }

    pub fn needs_embedding(self) -> bool {
        matches!(
            self,
            ModalityKind::EmbeddingToModel | ModalityKind::FeaturePlusEmbedding
        )
    }

    pub fn needs_sketches(self) -> bool {
        self != ModalityKind::EmbeddingToModel
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModalityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown modality `{s}`")))
    }
}

/// Value of the extra row appended to column-stacked multiclass features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadRow {
    #[default]
    Ones,
    Zeros,
}

impl PadRow {
    fn value(self) -> f64 {
        match self {
            PadRow::Ones => 1.0,
            PadRow::Zeros => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputModality {
    pub kind: ModalityKind,
    /// Sketches per input (per class for multiclass kinds).
    pub k: usize,
    /// Way count; ignored by binary kinds.
    #[serde(default = "default_ways")]
    pub c: usize,
    #[serde(default)]
    pub pad_row: PadRow,
}

fn default_ways() -> usize {
    1
}

/// Feature widths the input layout depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainDims {
    pub sketch: usize,
    pub photo: usize,
    pub embedding: Option<usize>,
}

impl DomainDims {
    pub fn of(manifest: &Manifest) -> Result<Self> {
        let get = |d: Domain| {
            manifest
                .dim(d)
                .ok_or_else(|| Error::Argument(format!("manifest has no {d} domain")))
        };
        Ok(DomainDims {
            sketch: get(Domain::Sketch)?,
            photo: get(Domain::Photo)?,
            embedding: manifest.dim(Domain::Embedding),
        })
    }
}

impl InputModality {
    pub fn new(kind: ModalityKind, k: usize) -> Self {
        InputModality {
            kind,
            k,
            c: if kind.is_multiclass() { 2 } else { 1 },
            pad_row: PadRow::Ones,
        }
    }

    pub fn multiclass(kind: ModalityKind, k: usize, c: usize) -> Self {
        InputModality {
            c,
            ..InputModality::new(kind, k)
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.k == 0 && self.kind.needs_sketches() {
            out.push(format!("{}: k must be at least 1", self.kind));
        }
        if self.kind.is_multiclass() && self.c < 2 {
            out.push(format!(
                "{}: c must be at least 2, got {}",
                self.kind, self.c
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Network input shape: `(length, 1)` for binary kinds, `(rows, c)` for
    /// multiclass kinds.
    pub fn input_shape(&self, dims: DomainDims) -> Result<(usize, usize)> {
        let embedding = || {
            dims.embedding.ok_or_else(|| {
                Error::Argument(format!("{} requires an embedding domain", self.kind))
            })
        };
        let shape = match self.kind {
            ModalityKind::ModelToModelBinary => (dims.sketch + 1, 1),
            ModalityKind::FeatureToModelBinary => (dims.sketch, 1),
            ModalityKind::EmbeddingToModel => (embedding()?, 1),
            ModalityKind::FeaturePlusEmbedding => (dims.sketch + embedding()?, 1),
            ModalityKind::CoarseFusion => (dims.photo + 1 + dims.sketch, 1),
            ModalityKind::ModelToModelMulticlass | ModalityKind::FeatureToModelMulticlass => {
                if dims.sketch != dims.photo {
                    return Err(Error::Shape(format!(
                        "{} keeps the input shape, so sketch and photo dims must agree ({} vs {})",
                        self.kind, dims.sketch, dims.photo
                    )));
                }
                (dims.sketch + 1, self.c)
            }
        };
        Ok(shape)
    }

    pub fn output_shape(&self, dims: DomainDims) -> (usize, usize) {
        if self.kind.is_multiclass() {
            (dims.photo + 1, self.c)
        } else {
            (dims.photo + 1, 1)
        }
    }
}

/// Everything `build_input` may need beyond the manifest itself.
#[derive(Clone, Copy, Debug)]
pub struct InputSources<'a> {
    pub manifest: &'a Manifest,
    /// Categories negatives are drawn from.
    pub pool: &'a [String],
    /// Negative sketches for few-shot sketch classifiers.
    pub negatives: usize,
    pub svm_epochs: usize,
    /// Sketch record indices to draw from, per category; defaults to all.
    pub sketch_pool: Option<&'a HashMap<String, Vec<usize>>>,
}

impl<'a> InputSources<'a> {
    pub fn new(manifest: &'a Manifest, pool: &'a [String]) -> Self {
        InputSources {
            manifest,
            pool,
            negatives: 600,
            svm_epochs: 50,
            sketch_pool: None,
        }
    }

    fn sketches(
        &self,
        category: &str,
        k: usize,
        stream: &mut RandomStream,
    ) -> Result<Vec<&'a [f64]>> {
        match self.sketch_pool {
            None => sample_category(self.manifest, category, Domain::Sketch, k, stream),
            Some(pool) => {
                let idx = pool.get(category).map_or(&[][..], Vec::as_slice);
                sample_records(self.manifest, idx, k, stream).map_err(|_| {
                    Error::Capacity(format!(
                        "category `{category}` has {} eligible sketches, {k} requested",
                        idx.len()
                    ))
                })
            }
        }
    }

    pub fn embedding(&self, category: &str) -> Result<Vec<f64>> {
        let v = self.manifest.vectors(category, Domain::Embedding);
        if v.is_empty() {
            return Err(Error::Argument(format!(
                "embedding input requires an embedding record for `{category}`"
            )));
        }
        average_features(&v)
    }
}

/// The sketches an input was built from, kept for baselines.
#[derive(Clone, Debug)]
pub struct BuiltInput {
    pub values: DenseMatrix,
    pub sketches: Vec<Vec<Vec<f64>>>,
}

/// Input for one binary target `category`. `coarse` is the coarse photo
/// classifier of the category's group and is required by coarse fusion.
pub fn build_binary_input(
    modality: &InputModality,
    sources: &InputSources<'_>,
    category: &str,
    coarse: Option<&[f64]>,
    c_reg: f64,
    stream: &mut RandomStream,
) -> Result<BuiltInput> {
    if modality.kind.is_multiclass() {
        return Err(Error::Argument(format!(
            "{} builds a class stack, not a single input",
            modality.kind
        )));
    }
    let k = modality.k;
    let (values, sketches) = match modality.kind {
        ModalityKind::ModelToModelBinary => {
            let shot = sample_few_shot(
                sources.manifest,
                category,
                Domain::Sketch,
                0,
                sources.negatives,
                sources.pool,
                stream,
            )?;
            let positives = sources.sketches(category, k, stream)?;
            let cfg = SvmConfig {
                c_reg,
                epochs: sources.svm_epochs,
                seed: stream.next_u64(),
            };
            let model = train_binary_svm(&positives, &shot.negatives, &cfg)?;
            (model.into_weights(), positives)
        }
        ModalityKind::FeatureToModelBinary => {
            let s = sources.sketches(category, k, stream)?;
            (average_features(&s)?, s)
        }
        ModalityKind::EmbeddingToModel => (sources.embedding(category)?, Vec::new()),
        ModalityKind::FeaturePlusEmbedding => {
            let s = sources.sketches(category, k, stream)?;
            let mut v = average_features(&s)?;
            v.extend(sources.embedding(category)?);
            (v, s)
        }
        ModalityKind::CoarseFusion => {
            let coarse = coarse.ok_or_else(|| {
                Error::Argument(format!(
                    "coarse_fusion requires the coarse photo classifier of `{category}`'s group"
                ))
            })?;
            let s = sources.sketches(category, k, stream)?;
            let mut v = coarse.to_vec();
            v.extend(average_features(&s)?);
            (v, s)
        }
        _ => unreachable!("multiclass kinds rejected above"),
    };
    let n = values.len();
    Ok(BuiltInput {
        values: DenseMatrix::new(n, 1, values)?,
        sketches: vec![sketches.into_iter().map(<[f64]>::to_vec).collect()],
    })
}

/// `(d+1) × c` input for an ordered group of categories; column `j`
/// describes `group[j]`.
pub fn build_multiclass_input(
    modality: &InputModality,
    sources: &InputSources<'_>,
    group: &[String],
    c_reg: f64,
    stream: &mut RandomStream,
) -> Result<BuiltInput> {
    if !modality.kind.is_multiclass() {
        return Err(Error::Argument(format!(
            "{} is not a multiclass modality",
            modality.kind
        )));
    }
    if group.len() != modality.c {
        return Err(Error::Shape(format!(
            "{}-way modality given a group of {}",
            modality.c,
            group.len()
        )));
    }
    let per_class: Vec<Vec<&[f64]>> = group
        .iter()
        .map(|c| sources.sketches(c, modality.k, stream))
        .collect::<Result<_>>()?;
    let values = match modality.kind {
        ModalityKind::FeatureToModelMulticlass => {
            let pad = modality.pad_row.value();
            let columns: Vec<Vec<f64>> = per_class
                .iter()
                .map(|s| {
                    let mut col = average_features(s)?;
                    col.push(pad);
                    Ok(col)
                })
                .collect::<Result<_>>()?;
            DenseMatrix::from_columns(&columns)?
        }
        ModalityKind::ModelToModelMulticlass => {
            let labelled: Vec<(String, Vec<&[f64]>)> = group
                .iter()
                .cloned()
                .zip(per_class.iter().cloned())
                .collect();
            let cfg = SvmConfig {
                c_reg,
                epochs: sources.svm_epochs,
                seed: stream.next_u64(),
            };
            train_multiclass_svm(&labelled, &cfg)?.weights().clone()
        }
        _ => unreachable!("binary kinds rejected above"),
    };
    Ok(BuiltInput {
        values,
        sketches: per_class
            .into_iter()
            .map(|s| s.into_iter().map(<[f64]>::to_vec).collect())
            .collect(),
    })
}
