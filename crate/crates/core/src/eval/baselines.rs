use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::eval::RankedResult;
use crate::numeric::{squared_distance, DenseMatrix};

/// Negative Euclidean distance from `x` to the closest of `sketches`.
pub fn nn_score<V: AsRef<[f64]>>(x: &[f64], sketches: &[V]) -> Result<f64> {
    if sketches.is_empty() {
        return Err(Error::Argument(
            "nearest-neighbour score needs at least one sketch".into(),
        ));
    }
    let mut best = f64::INFINITY;
    for s in sketches {
        let s = s.as_ref();
        if s.len() != x.len() {
            return Err(Error::Shape(format!(
                "sketch has length {}, photo has length {}",
                s.len(),
                x.len()
            )));
        }
        best = best.min(squared_distance(x, s));
    }
    Ok(-best.sqrt())
}

/// Ranks `photos` for each labelled sketch set by nearest-sketch distance.
/// Relevance of photo `i` for category `c` is `photo_labels[i] == c`.
pub fn nn_baseline<P, S, V>(
    photos: &[P],
    photo_labels: &[S],
    sketches: &[(String, Vec<V>)],
) -> Result<Vec<(String, RankedResult)>>
where
    P: AsRef<[f64]>,
    S: AsRef<str>,
    V: AsRef<[f64]>,
{
    if photos.len() != photo_labels.len() {
        return Err(Error::Shape(format!(
            "{} photos for {} labels",
            photos.len(),
            photo_labels.len()
        )));
    }
    sketches
        .iter()
        .map(|(category, set)| {
            let scores = photos
                .iter()
                .map(|p| nn_score(p.as_ref(), set))
                .collect::<Result<Vec<_>>>()?;
            let labels = photo_labels
                .iter()
                .map(|l| l.as_ref() == category)
                .collect();
            Ok((category.clone(), RankedResult::new(scores, labels)?))
        })
        .collect()
}

/// Index of the class whose nearest sketch is closest; ties go to the lower
/// index.
pub fn nn_classify<V: AsRef<[f64]>>(x: &[f64], per_class: &[Vec<V>]) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, set) in per_class.iter().enumerate() {
        let s = nn_score(x, set)?;
        if s > best.1 {
            best = (j, s);
        }
    }
    Ok(best.0)
}

/// PCA subspaces of a source and a target feature set and the alignment
/// `M = X_sᵀ X_t` between them.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceAlignment {
    source_mean: Vec<f64>,
    target_mean: Vec<f64>,
    /// `d × d_sub`, columns are principal directions.
    source_basis: DenseMatrix,
    target_basis: DenseMatrix,
    alignment: DenseMatrix,
}

impl SubspaceAlignment {
    pub fn fit<V: AsRef<[f64]>>(source: &[V], target: &[V], d_sub: usize) -> Result<Self> {
        let (source_mean, source_basis) = pca(source, d_sub, "source")?;
        let (target_mean, target_basis) = pca(target, d_sub, "target")?;
        if source_mean.len() != target_mean.len() {
            return Err(Error::Shape(format!(
                "source features have length {}, target features {}",
                source_mean.len(),
                target_mean.len()
            )));
        }
        let alignment = crate::numeric::matmul_at_b(&source_basis, &target_basis)?;
        Ok(SubspaceAlignment {
            source_mean,
            target_mean,
            source_basis,
            target_basis,
            alignment,
        })
    }

    pub fn source_basis(&self) -> &DenseMatrix {
        &self.source_basis
    }

    pub fn target_basis(&self) -> &DenseMatrix {
        &self.target_basis
    }

    pub fn alignment(&self) -> &DenseMatrix {
        &self.alignment
    }

    /// `(x − μ_s)ᵀ X_s M`.
    pub fn transform_source(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = project(x, &self.source_mean, &self.source_basis)?;
        let row = DenseMatrix::new(1, z.len(), z)?;
        Ok(row.matmul(&self.alignment)?.into_data())
    }

    /// `(x − μ_t)ᵀ X_t`.
    pub fn transform_target(&self, x: &[f64]) -> Result<Vec<f64>> {
        project(x, &self.target_mean, &self.target_basis)
    }
}

fn project(x: &[f64], mean: &[f64], basis: &DenseMatrix) -> Result<Vec<f64>> {
    if x.len() != mean.len() {
        return Err(Error::Shape(format!(
            "feature has length {}, subspace expects {}",
            x.len(),
            mean.len()
        )));
    }
    let centred: Vec<f64> = x.iter().zip(mean).map(|(a, m)| a - m).collect();
    let row = DenseMatrix::new(1, centred.len(), centred)?;
    Ok(row.matmul(basis)?.into_data())
}

/// Mean and top-`k` principal directions. Each direction's largest-magnitude
/// entry is made positive (first such entry on ties).
pub fn pca<V: AsRef<[f64]>>(
    samples: &[V],
    k: usize,
    name: &str,
) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = samples.len();
    let d = samples.first().map_or(0, |s| s.as_ref().len());
    if k == 0 || k > d || k > n {
        return Err(Error::Dimensionality(format!(
            "{name}: subspace dimension {k} must lie in 1..=min(d={d}, n={n})"
        )));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        let s = s.as_ref();
        if s.len() != d {
            return Err(Error::Shape(format!(
                "{name}: mixed feature lengths {} and {d}",
                s.len()
            )));
        }
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, d, |i, j| samples[i].as_ref()[j] - mean[j]);
    let cov = (centred.transpose() * &centred) / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10 * d as f64;
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    if top == 0.0 || rank < k {
        return Err(Error::Dimensionality(format!(
            "{name}: covariance has rank {rank}, below the requested subspace dimension {k}"
        )));
    }
    let mut basis = DenseMatrix::zeros(d, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = (0..d).fold(
            0,
            |best, r| if v[r].abs() > v[best].abs() { r } else { best },
        );
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            basis[(r, c)] = sign * v[r];
        }
    }
    Ok((mean, basis))
}
