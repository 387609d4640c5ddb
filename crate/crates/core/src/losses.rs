//! Regression and performance losses for classifier synthesis.
//!
//! The regression loss is the plain (unsquared) Euclidean / Frobenius
//! distance between a synthesized classifier and its ground truth; the
//! performance loss scores the synthesized classifier on photos (hinge for
//! binary, softmax cross-entropy for multi-class). They are combined as
//! `alpha * regression + beta * performance`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;
use crate::svm::{augmented_score, BinaryLinearModel, MultiClassLinearModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.01,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Argument(format!(
                "loss weights must be non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Argument("alpha and beta cannot both be zero".into()));
        }
        Ok(())
    }
}

/// Norm used by the regression loss. `Squared` exists for ablations only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionNorm {
    #[default]
    Euclidean,
    Squared,
}

/// Distance between two weight vectors and its gradient wrt `predicted`.
/// At an exact match the gradient is the zero vector.
pub fn regression_loss_with(
    predicted: &[f64],
    target: &[f64],
    norm: RegressionNorm,
) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != target.len() {
        return Err(Error::Shape(format!(
            "predicted has {} entries, target has {}",
            predicted.len(),
            target.len()
        )));
    }
    let diff: Vec<f64> = predicted.iter().zip(target).map(|(p, t)| p - t).collect();
    let sq: f64 = diff.iter().map(|v| v * v).sum();
    Ok(match norm {
        RegressionNorm::Euclidean => {
            let dist = sq.sqrt();
            if dist == 0.0 {
                (0.0, vec![0.0; diff.len()])
            } else {
                (dist, diff.into_iter().map(|v| v / dist).collect())
            }
        }
        RegressionNorm::Squared => (sq, diff.into_iter().map(|v| 2.0 * v).collect()),
    })
}

pub fn regression_loss_vec(predicted: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    regression_loss_with(predicted, target, RegressionNorm::Euclidean)
}

/// Frobenius distance; the gradient has the same shape as the inputs.
pub fn regression_loss_mat(
    predicted: &DenseMatrix,
    target: &DenseMatrix,
) -> Result<(f64, DenseMatrix)> {
    if predicted.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "predicted is {}x{}, target is {}x{}",
            predicted.rows(),
            predicted.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let (loss, grad) = regression_loss_vec(predicted.data(), target.data())?;
    Ok((
        loss,
        DenseMatrix::new(predicted.rows(), predicted.cols(), grad)?,
    ))
}

/// Mean hinge loss of a `(d + 1)` weight vector over a labelled batch, and
/// its subgradient. At the kink (margin exactly 1) the zero branch is used.
pub fn hinge_loss_weights<V: AsRef<[f64]>>(
    weights: &[f64],
    photos: &[V],
    labels: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if photos.is_empty() {
        return Err(Error::Argument("hinge loss over an empty batch".into()));
    }
    if photos.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} photos with {} labels",
            photos.len(),
            labels.len()
        )));
    }
    let d = weights.len() - 1;
    let n = photos.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    for (i, (x, &y)) in photos.iter().zip(labels).enumerate() {
        if y != 1.0 && y != -1.0 {
            return Err(Error::Argument(format!(
                "label {i} is {y}, expected -1 or +1"
            )));
        }
        let x = x.as_ref();
        if x.len() != d {
            return Err(Error::Shape(format!(
                "photo {i} has {} features, model expects {d}",
                x.len()
            )));
        }
        let slack = 1.0 - y * augmented_score(weights, x);
        if slack > 0.0 {
            loss += slack;
            for (g, xj) in grad.iter_mut().zip(x) {
                *g -= y * xj;
            }
            grad[d] -= y;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

pub fn hinge_performance_loss<V: AsRef<[f64]>>(
    model: &BinaryLinearModel,
    photos: &[V],
    labels: &[f64],
) -> Result<(f64, Vec<f64>)> {
    hinge_loss_weights(model.weights(), photos, labels)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

const LOG_FLOOR: f64 = 1e-300;

/// Converts class indices into one-hot rows.
pub fn one_hot(classes: &[usize], c: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(classes.len(), c);
    for (i, &k) in classes.iter().enumerate() {
        m[(i, k)] = 1.0;
    }
    m
}

/// Mean softmax cross-entropy of a `(d + 1) × c` weight matrix over a batch
/// with one-hot labels (`n × c`), and its gradient.
pub fn cross_entropy_weights<V: AsRef<[f64]>>(
    weights: &DenseMatrix,
    photos: &[V],
    labels: &DenseMatrix,
) -> Result<(f64, DenseMatrix)> {
    let (d1, c) = weights.shape();
    let d = d1 - 1;
    if photos.is_empty() {
        return Err(Error::Argument("cross-entropy over an empty batch".into()));
    }
    if labels.shape() != (photos.len(), c) {
        return Err(Error::Shape(format!(
            "labels are {}x{}, expected {}x{c}",
            labels.rows(),
            labels.cols(),
            photos.len()
        )));
    }
    let n = photos.len() as f64;
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(d1, c);
    for (i, x) in photos.iter().enumerate() {
        let x = x.as_ref();
        if x.len() != d {
            return Err(Error::Shape(format!(
                "photo {i} has {} features, model expects {d}",
                x.len()
            )));
        }
        let y = labels.row(i);
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != c {
            return Err(Error::Argument(format!("label row {i} is not one-hot")));
        }
        let mut scores = weights.row(d).to_vec();
        for (j, xj) in x.iter().enumerate() {
            for (s, w) in scores.iter_mut().zip(weights.row(j)) {
                *s += xj * w;
            }
        }
        let p = softmax(&scores);
        let truth = y.iter().position(|&v| v == 1.0).expect("checked one-hot");
        loss -= p[truth].max(LOG_FLOOR).ln();
        let delta: Vec<f64> = p.iter().zip(y).map(|(pk, yk)| (pk - yk) / n).collect();
        for (j, xj) in x.iter().chain(std::iter::once(&1.0)).enumerate() {
            for (g, dk) in grad.row_mut(j).iter_mut().zip(&delta) {
                *g += xj * dk;
            }
        }
    }
    Ok((loss / n, grad))
}

pub fn ce_performance_loss<V: AsRef<[f64]>>(
    model: &MultiClassLinearModel,
    photos: &[V],
    labels: &DenseMatrix,
) -> Result<(f64, DenseMatrix)> {
    cross_entropy_weights(model.weights(), photos, labels)
}

pub fn combined_objective(regression: f64, performance: f64, weights: LossWeights) -> f64 {
    weights.alpha * regression + weights.beta * performance
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_vector_cases() {
        assert_eq!(
            regression_loss_vec(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            (0.0, vec![0.0, 0.0])
        );
        let (l, g) = regression_loss_vec(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g, vec![0.6, 0.8]);
        assert!(regression_loss_vec(&[1.0], &[1.0, 2.0]).is_err());
        let (l, g) =
            regression_loss_with(&[3.0, 4.0], &[0.0, 0.0], RegressionNorm::Squared).unwrap();
        assert_eq!(l, 25.0);
        assert_eq!(g, vec![6.0, 8.0]);
    }

    #[test]
    fn regression_matrix_cases() {
        let a = DenseMatrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let z = DenseMatrix::zeros(2, 2);
        assert_eq!(regression_loss_mat(&a, &a).unwrap().0, 0.0);
        let (l, g) = regression_loss_mat(&a, &z).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g.shape(), (2, 2));
        assert_eq!(l, regression_loss_vec(a.data(), z.data()).unwrap().0);
        assert!(regression_loss_mat(&a, &DenseMatrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn hinge_cases() {
        // w = [1, 0]: score equals the single feature.
        let w = [1.0, 0.0];
        assert_eq!(hinge_loss_weights(&w, &[[2.0]], &[1.0]).unwrap().0, 0.0);
        assert_eq!(hinge_loss_weights(&w, &[[0.0]], &[1.0]).unwrap().0, 1.0);
        assert_eq!(hinge_loss_weights(&w, &[[0.5]], &[-1.0]).unwrap().0, 1.5);
        assert!(hinge_loss_weights(&w, &[[0.5]], &[0.0]).is_err());
        assert!(hinge_loss_weights::<[f64; 1]>(&w, &[], &[]).is_err());
        // Kink uses the zero branch.
        let (l, g) = hinge_loss_weights(&w, &[[1.0]], &[1.0]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_cases() {
        let w = DenseMatrix::zeros(3, 10);
        let y = one_hot(&[4], 10);
        let (l, _) = cross_entropy_weights(&w, &[[0.3, -1.0]], &y).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);

        // Two classes with score gap g: ln(1 + e^-g).
        let w = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let y = one_hot(&[0], 2);
        let (l0, _) = cross_entropy_weights(&w, &[[0.0]], &y).unwrap();
        assert!((l0 - 2f64.ln()).abs() < 1e-12);
        let (l3, _) = cross_entropy_weights(&w, &[[3.0]], &y).unwrap();
        assert!((l3 - (1.0 + (-3f64).exp()).ln()).abs() < 1e-12);

        // Confident and correct: loss vanishes.
        let (lbig, _) = cross_entropy_weights(&w, &[[800.0]], &y).unwrap();
        assert_eq!(lbig, 0.0);

        let bad = DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!(cross_entropy_weights(&w, &[[0.0]], &bad).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        for scores in [
            vec![0.0, 1.0, 2.0],
            vec![1000.0, -1000.0, 3.0],
            vec![-5e5; 4],
        ] {
            let p = softmax(&scores);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn combined() {
        let w = LossWeights::default();
        assert!((combined_objective(2.0, 0.5, w) - 0.52).abs() < 1e-15);
        assert_eq!(
            combined_objective(2.0, 0.5, LossWeights::new(0.0, 1.0).unwrap()),
            0.5
        );
        assert_eq!(
            combined_objective(2.0, 0.5, LossWeights::new(0.01, 0.0).unwrap()),
            0.02
        );
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
    }
}
