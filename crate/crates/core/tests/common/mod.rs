//! Independent reference computations shared by the integration tests and
//! the acceptance suite.

#![allow(dead_code)]

pub mod grad;

use s2m_core::numeric::DenseMatrix;
use s2m_core::svm::{train_binary_svm, SvmConfig};
use s2m_core::RandomStream;

/// Central-difference step for 64-bit checks.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms: a bias that
/// feeds batch normalization has an exactly zero gradient, and its central
/// difference is pure rounding noise of order `ε·|f| / h`.
pub const REL_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between `analytic` and a central difference of
/// `f` around `x`, over every coordinate.
pub fn fd_check(x: &[f64], analytic: &[f64], f: impl FnMut(&[f64]) -> f64) -> f64 {
    let all: Vec<usize> = (0..x.len()).collect();
    fd_check_at(x, analytic, &all, f)
}

/// As `fd_check`, restricted to the listed coordinates.
pub fn fd_check_at(
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for &i in coords {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    worst
}

pub fn gaussian_vec(stream: &mut RandomStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * stream.gaussian()).collect()
}

pub fn gaussian(stream: &mut RandomStream, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::new(rows, cols, gaussian_vec(stream, rows * cols, scale)).unwrap()
}

/// `Σ r ⊙ y`: a random linear read-out that turns a layer output into a
/// scalar whose gradient wrt `y` is `r`.
pub fn readout(r: &DenseMatrix, y: &DenseMatrix) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// Random scores with deliberate ties (integer rounding on half the sets)
/// and at least one positive label.
pub fn random_ranking(s: &mut RandomStream) -> (Vec<f64>, Vec<bool>) {
    let n = 1 + s.uniform_below(40);
    let quantize = s.uniform() < 0.5;
    let rate = 0.1 + 0.8 * s.uniform();
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            let v = 3.0 * s.gaussian();
            if quantize {
                v.round()
            } else {
                v
            }
        })
        .collect();
    let mut labels: Vec<bool> = (0..n).map(|_| s.uniform() < rate).collect();
    if !labels.iter().any(|l| *l) {
        let i = s.uniform_below(n);
        labels[i] = true;
    }
    (scores, labels)
}

/// Average precision straight from its definition: the mean, over positive
/// items, of the precision among all items scored at least as high as that
/// item, where ties are broken by original index (earlier first).
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let mut total = 0.0;
    let mut positives = 0;
    for i in 0..n {
        if !labels[i] {
            continue;
        }
        positives += 1;
        let mut retrieved = 0usize;
        let mut hits = 0usize;
        for j in 0..n {
            if ahead(i, j) {
                retrieved += 1;
                if labels[j] {
                    hits += 1;
                }
            }
        }
        total += hits as f64 / retrieved as f64;
    }
    total / positives as f64
}

/// `½‖w‖² + C Σ max(0, 1 − y(w·x + b))` for 2-D points.
pub fn primal_2d(w: [f64; 2], b: f64, points: &[[f64; 2]], labels: &[f64], c: f64) -> f64 {
    let hinge: f64 = points
        .iter()
        .zip(labels)
        .map(|(x, y)| (1.0 - y * (w[0] * x[0] + w[1] * x[1] + b)).max(0.0))
        .sum();
    0.5 * (w[0] * w[0] + w[1] * w[1]) + c * hinge
}

/// Exhaustive minimum of the 2-D primal over `[-3, 3]³` at the given step.
/// For each `(w1, w2)` cell the objective is convex piecewise linear in `b`,
/// so `b` is refined by ternary search over the same range, then snapped to
/// the grid.
pub fn grid_oracle_2d(points: &[[f64; 2]], labels: &[f64], c: f64, step: f64) -> f64 {
    let steps = (6.0 / step).round() as i64;
    let at = |i: i64| -3.0 + i as f64 * step;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        for j in 0..=steps {
            let w = [at(i), at(j)];
            let f = |k: i64| primal_2d(w, at(k), points, labels, c);
            let (mut lo, mut hi) = (0i64, steps);
            while hi - lo > 2 {
                let m1 = lo + (hi - lo) / 3;
                let m2 = hi - (hi - lo) / 3;
                if f(m1) <= f(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            for k in lo..=hi {
                best = best.min(f(k));
            }
        }
    }
    best
}

/// Two Gaussian blobs in the plane with labels ±1.
pub fn blobs_2d(stream: &mut RandomStream, n: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        points.push([
            0.8 * y + 0.7 * stream.gaussian(),
            0.4 * y + 0.7 * stream.gaussian(),
        ]);
        labels.push(y);
    }
    (points, labels)
}

/// Trains the library SVM on labelled planar points and returns `(w, b)`.
pub fn fit_svm_2d(points: &[[f64; 2]], labels: &[f64], c: f64, seed: u64) -> ([f64; 2], f64) {
    let split = |sign: f64| -> Vec<&[f64]> {
        points
            .iter()
            .zip(labels)
            .filter(|(_, y)| **y == sign)
            .map(|(p, _)| p.as_slice())
            .collect()
    };
    let cfg = SvmConfig {
        c_reg: c,
        epochs: 300,
        seed,
    };
    let m = train_binary_svm(&split(1.0), &split(-1.0), &cfg).unwrap();
    let w = m.weights();
    ([w[0], w[1]], w[2])
}

/// Primal gap of the library SVM against the grid oracle on one random
/// 20-point planar set: `(trained, oracle)`.
pub fn svm_oracle_case(set: u64, step: f64) -> (f64, f64) {
    let mut s = RandomStream::new(4000 + set);
    let (points, labels) = blobs_2d(&mut s, 20);
    let (w, b) = fit_svm_2d(&points, &labels, 1.0, set);
    (
        primal_2d(w, b, &points, &labels, 1.0),
        grid_oracle_2d(&points, &labels, 1.0, step),
    )
}
