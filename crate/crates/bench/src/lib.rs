//! Shared fixtures for the kernel benchmarks.

pub use s2m_core;

use s2m_core::{DenseMatrix, RandomStream};

pub fn gaussian_matrix(stream: &mut RandomStream, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| stream.gaussian()).collect();
    DenseMatrix::new(rows, cols, data).expect("finite samples")
}

pub fn gaussian_rows(stream: &mut RandomStream, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| stream.gaussian()).collect())
        .collect()
}
