//! L2-regularized hinge-loss linear classifiers.
//!
//! Training minimizes the primal
//!
//! ```text
//! (λ/2)‖w‖² + (1/n) Σ max(0, 1 − yᵢ·(w·x̃ᵢ)),   λ = 1/(C·n)
//! ```
//!
//! where `x̃` is the feature with a constant 1 appended, so the bias is the
//! last weight and is regularized together with the rest. The solver is
//! Pegasos: one shuffled pass per epoch, step `1/(λt)`, projection onto the
//! ball of radius `1/√λ`, and the returned weights are the average of the
//! iterates from the second half of all steps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, DenseMatrix, RandomStream};

/// Regularization grid used to vary few-shot input classifiers.
pub const C_GRID: [f64; 5] = [1e-2, 1e-1, 1.0, 1e1, 1e2];

/// Weights of `d` features followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryLinearModel {
    weights: Vec<f64>,
}

impl BinaryLinearModel {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::Shape(format!(
                "binary model needs at least one feature weight plus bias, got {} values",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Argument("non-finite classifier weight".into()));
        }
        Ok(BinaryLinearModel { weights })
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len() - 1
    }

    /// All `d + 1` values, bias last.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.weights[self.weights.len() - 1]
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

/// `(d + 1) × c` weights, one column per class, bias in the last row.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiClassLinearModel {
    weights: DenseMatrix,
    class_labels: Vec<String>,
}

impl MultiClassLinearModel {
    pub fn new(weights: DenseMatrix, class_labels: Vec<String>) -> Result<Self> {
        if weights.cols() != class_labels.len() {
            return Err(Error::Shape(format!(
                "{} weight columns for {} class labels",
                weights.cols(),
                class_labels.len()
            )));
        }
        if weights.rows() < 2 {
            return Err(Error::Shape(
                "multi-class model needs d + 1 >= 2 rows".into(),
            ));
        }
        if !weights.is_finite() {
            return Err(Error::Argument("non-finite classifier weight".into()));
        }
        Ok(MultiClassLinearModel {
            weights,
            class_labels,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.rows() - 1
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    /// Per-class scores `W̃ᵀ x̃`.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.feature_dim(), x.len())?;
        let d = self.feature_dim();
        let mut out = self.weights.row(d).to_vec();
        for (i, xi) in x.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.weights.row(i)) {
                *o += xi * w;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c_reg: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c_reg: 1.0,
            epochs: 50,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_reg > 0.0 && self.c_reg.is_finite()) {
            return Err(Error::Argument(format!(
                "C must be > 0, got {}",
                self.c_reg
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!(
            "model expects {expected}-d features, got {got}"
        )));
    }
    Ok(())
}

/// `w·x̃` for a `(d + 1)` weight slice.
pub fn augmented_score(weights: &[f64], x: &[f64]) -> f64 {
    let d = weights.len() - 1;
    dot(&weights[..d], x) + weights[d]
}

/// Primal objective of a weight vector on labelled data.
pub fn primal_objective<V: AsRef<[f64]>>(
    weights: &[f64],
    samples: &[V],
    labels: &[f64],
    c_reg: f64,
) -> f64 {
    let n = samples.len() as f64;
    let lambda = 1.0 / (c_reg * n);
    let reg = 0.5 * lambda * dot(weights, weights);
    let hinge: f64 = samples
        .iter()
        .zip(labels)
        .map(|(x, y)| (1.0 - y * augmented_score(weights, x.as_ref())).max(0.0))
        .sum();
    reg + hinge / n
}

/// Pegasos on pre-labelled samples (labels ±1, order as given before the
/// per-epoch shuffle).
pub fn train_signed<V: AsRef<[f64]>>(
    samples: &[V],
    labels: &[f64],
    config: &SvmConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = samples.len();
    if n == 0 || labels.len() != n {
        return Err(Error::Argument(format!(
            "{n} samples with {} labels",
            labels.len()
        )));
    }
    let d = samples[0].as_ref().len();
    if let Some(i) = samples.iter().position(|s| s.as_ref().len() != d) {
        return Err(Error::Shape(format!(
            "sample {i} has length {}, expected {d}",
            samples[i].as_ref().len()
        )));
    }
    let lambda = 1.0 / (config.c_reg * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let total = config.epochs * n;
    let average_from = total / 2;

    let mut stream = RandomStream::new(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = vec![0.0; d + 1];
    let mut sum = vec![0.0; d + 1];
    let mut t = 0usize;
    for _ in 0..config.epochs {
        stream.shuffle(&mut order);
        for &i in &order {
            t += 1;
            let x = samples[i].as_ref();
            let y = labels[i];
            let eta = 1.0 / (lambda * t as f64);
            let margin = y * augmented_score(&w, x);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                let step = eta * y;
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += step * xj;
                }
                w[d] += step;
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
            if t > average_from {
                for (a, v) in sum.iter_mut().zip(&w) {
                    *a += v;
                }
            }
        }
    }
    let count = (total - average_from) as f64;
    let averaged: Vec<f64> = sum.into_iter().map(|v| v / count).collect();
    // Averaging can overshoot on tiny or noisy sets; never return anything
    // worse than the starting point.
    let zero = vec![0.0; d + 1];
    let objective = |v: &[f64]| primal_objective(v, samples, labels, config.c_reg);
    let start = objective(&zero);
    if objective(&averaged) <= start {
        Ok(averaged)
    } else if objective(&w) <= start {
        Ok(w)
    } else {
        Ok(zero)
    }
}

pub fn train_binary_svm(
    positives: &[&[f64]],
    negatives: &[&[f64]],
    config: &SvmConfig,
) -> Result<BinaryLinearModel> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Argument(format!(
            "binary SVM needs both classes, got {} positives and {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let samples: Vec<&[f64]> = positives.iter().chain(negatives).copied().collect();
    let labels: Vec<f64> = std::iter::repeat_n(1.0, positives.len())
        .chain(std::iter::repeat_n(-1.0, negatives.len()))
        .collect();
    BinaryLinearModel::new(train_signed(&samples, &labels, config)?)
}

/// One-vs-rest multi-class SVM. Column order follows `per_class`; the
/// underlying sample order is by sorted class label so that permuting the
/// input permutes the columns exactly.
pub fn train_multiclass_svm(
    per_class: &[(String, Vec<&[f64]>)],
    config: &SvmConfig,
) -> Result<MultiClassLinearModel> {
    if per_class.len() < 2 {
        return Err(Error::Argument(format!(
            "multi-class SVM needs at least 2 classes, got {}",
            per_class.len()
        )));
    }
    if let Some((label, _)) = per_class.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::Argument(format!("class `{label}` has no samples")));
    }
    let mut canonical: Vec<usize> = (0..per_class.len()).collect();
    canonical.sort_by(|&a, &b| per_class[a].0.cmp(&per_class[b].0));
    let mut samples: Vec<&[f64]> = Vec::new();
    let mut owner: Vec<usize> = Vec::new();
    for &ci in &canonical {
        for v in &per_class[ci].1 {
            samples.push(v);
            owner.push(ci);
        }
    }
    let d = samples[0].len();
    let mut weights = DenseMatrix::zeros(d + 1, per_class.len());
    for col in 0..per_class.len() {
        let labels: Vec<f64> = owner
            .iter()
            .map(|&o| if o == col { 1.0 } else { -1.0 })
            .collect();
        let w = train_signed(&samples, &labels, config)?;
        weights.set_column(col, &w);
    }
    MultiClassLinearModel::new(weights, per_class.iter().map(|(l, _)| l.clone()).collect())
}

pub fn predict_score(model: &BinaryLinearModel, x: &[f64]) -> Result<f64> {
    check_dim(model.feature_dim(), x.len())?;
    Ok(augmented_score(&model.weights, x))
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict_class<'m>(model: &'m MultiClassLinearModel, x: &[f64]) -> Result<&'m str> {
    let scores = model.scores(x)?;
    Ok(&model.class_labels[argmax(&scores)])
}

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Binary,
    Multiclass,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    kind: ModelKind,
    feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_labels: Option<Vec<String>>,
}

/// A stored classifier of either arity.
#[derive(Clone, Debug, PartialEq)]
pub enum LinearModel {
    Binary(BinaryLinearModel),
    MultiClass(MultiClassLinearModel),
}

/// The weight payload lives next to the JSON header with extension `w64le`.
pub fn weights_path(header: &Path) -> PathBuf {
    header.with_extension("w64le")
}

impl LinearModel {
    /// Writes the JSON header to `path` and the row-major little-endian
    /// `f64` weights to the sibling `.w64le` file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (header, values): (ModelHeader, &[f64]) = match self {
            LinearModel::Binary(m) => (
                ModelHeader {
                    version: MODEL_VERSION,
                    kind: ModelKind::Binary,
                    feature_dim: m.feature_dim(),
                    class_labels: None,
                },
                m.weights(),
            ),
            LinearModel::MultiClass(m) => (
                ModelHeader {
                    version: MODEL_VERSION,
                    kind: ModelKind::Multiclass,
                    feature_dim: m.feature_dim(),
                    class_labels: Some(m.class_labels().to_vec()),
                },
                m.weights().data(),
            ),
        };
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
        write_f64le(&weights_path(path), values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LinearModel> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: ModelHeader =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if header.version != MODEL_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported version {}", header.version),
            ));
        }
        let values = read_f64le(&weights_path(path))?;
        let d1 = header.feature_dim + 1;
        match header.kind {
            ModelKind::Binary => {
                if values.len() != d1 {
                    return Err(Error::parse(
                        weights_path(path),
                        format!("expected {} weights, found {}", d1, values.len()),
                    ));
                }
                Ok(LinearModel::Binary(BinaryLinearModel::new(values)?))
            }
            ModelKind::Multiclass => {
                let labels = header
                    .class_labels
                    .ok_or_else(|| Error::parse(path, "multiclass model without class_labels"))?;
                if values.len() != d1 * labels.len() {
                    return Err(Error::parse(
                        weights_path(path),
                        format!(
                            "expected {} weights, found {}",
                            d1 * labels.len(),
                            values.len()
                        ),
                    ));
                }
                let w = DenseMatrix::new(d1, labels.len(), values)?;
                Ok(LinearModel::MultiClass(MultiClassLinearModel::new(
                    w, labels,
                )?))
            }
        }
    }
}

pub(crate) fn write_f64le(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f64le(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::parse(
            path,
            format!(
                "payload of {} bytes is not a whole number of f64",
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
