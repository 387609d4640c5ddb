use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svm::{predict_class, MultiClassLinearModel};

/// Scores for a list of items and their binary relevance.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedResult {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl RankedResult {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::Argument(format!("score {i} is NaN")));
        }
        Ok(RankedResult { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    /// Item indices by descending score; ties (including `-0.0` vs `0.0`)
    /// keep ascending index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("NaN rejected at construction")
        });
        order
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Mean of precision at the rank of each positive.
    #[default]
    Raw,
    /// Precision at each positive replaced by the best precision at any
    /// equal or deeper recall.
    Interpolated,
}

pub fn average_precision(result: &RankedResult) -> Result<f64> {
    average_precision_with(result, ApMode::Raw)
}

pub fn average_precision_with(result: &RankedResult, mode: ApMode) -> Result<f64> {
    let total = result.positives();
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut precisions = Vec::with_capacity(total);
    let mut hits = 0usize;
    for (rank, &i) in result.ranking().iter().enumerate() {
        if result.labels[i] {
            hits += 1;
            precisions.push(hits as f64 / (rank + 1) as f64);
        }
    }
    if mode == ApMode::Interpolated {
        for i in (0..precisions.len().saturating_sub(1)).rev() {
            precisions[i] = precisions[i].max(precisions[i + 1]);
        }
    }
    Ok(precisions.iter().sum::<f64>() / total as f64)
}

pub fn mean_ap(results: &[RankedResult]) -> Result<f64> {
    mean_ap_with(results, ApMode::Raw)
}

pub fn mean_ap_with(results: &[RankedResult], mode: ApMode) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::UndefinedMetric("mean AP of an empty list".into()));
    }
    let mut sum = 0.0;
    for r in results {
        sum += average_precision_with(r, mode)?;
    }
    Ok(sum / results.len() as f64)
}

/// Fraction of `photos` whose predicted label equals `labels[i]`.
pub fn multiclass_accuracy<V: AsRef<[f64]>, S: AsRef<str>>(
    model: &MultiClassLinearModel,
    photos: &[V],
    labels: &[S],
) -> Result<f64> {
    if photos.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    if photos.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} photos for {} labels",
            photos.len(),
            labels.len()
        )));
    }
    let mut correct = 0usize;
    for (x, y) in photos.iter().zip(labels) {
        if predict_class(model, x.as_ref())? == y.as_ref() {
            correct += 1;
        }
    }
    Ok(correct as f64 / photos.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::DenseMatrix;

    fn rr(scores: &[f64], labels: &[u8]) -> RankedResult {
        RankedResult::new(scores.to_vec(), labels.iter().map(|l| *l == 1).collect()).unwrap()
    }

    #[test]
    fn positives_first() {
        assert_eq!(
            average_precision(&rr(&[0.9, 0.8, 0.7], &[1, 1, 0])).unwrap(),
            1.0
        );
    }

    #[test]
    fn hand_computed() {
        let ap = average_precision(&rr(&[0.9, 0.8, 0.7], &[0, 1, 1])).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn all_positive() {
        assert_eq!(
            average_precision(&rr(&[0.1, 5.0, -2.0], &[1, 1, 1])).unwrap(),
            1.0
        );
    }

    #[test]
    fn no_positives_is_undefined() {
        assert!(matches!(
            average_precision(&rr(&[0.1, 0.2], &[0, 0])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ties_use_index_order() {
        // Equal scores: the earlier index ranks first.
        assert_eq!(average_precision(&rr(&[1.0, 1.0], &[1, 0])).unwrap(), 1.0);
        assert_eq!(average_precision(&rr(&[1.0, 1.0], &[0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn interpolation_never_lowers() {
        let r = rr(&[0.9, 0.8, 0.7, 0.6, 0.5], &[0, 1, 0, 1, 1]);
        let raw = average_precision(&r).unwrap();
        let interp = average_precision_with(&r, ApMode::Interpolated).unwrap();
        assert!(interp >= raw);
        // precisions 1/2, 2/4, 3/5 -> interpolated 3/5, 3/5, 3/5
        assert!((interp - 0.6).abs() < 1e-15);
    }

    #[test]
    fn mean_of_two() {
        let a = rr(&[1.0, 0.0], &[1, 0]);
        let b = rr(&[1.0, 0.0], &[0, 1]);
        assert_eq!(mean_ap(&[a, b]).unwrap(), 0.75);
    }

    #[test]
    fn accuracy_cases() {
        let w = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]).unwrap();
        let model = MultiClassLinearModel::new(w, vec!["a".into(), "b".into()]).unwrap();
        let photos = vec![vec![1.0], vec![-1.0]];
        assert_eq!(
            multiclass_accuracy(&model, &photos, &["a", "b"]).unwrap(),
            1.0
        );
        let flat = DenseMatrix::zeros(2, 2);
        let constant = MultiClassLinearModel::new(flat, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(
            multiclass_accuracy(&constant, &photos, &["a", "b"]).unwrap(),
            0.5
        );
    }
}
