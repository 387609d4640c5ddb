//! Layer primitives with explicit forward/backward passes.
//!
//! Activations are matrices with one row per position and one column per
//! channel (or unit). Convolutions treat consecutive blocks of `len` rows as
//! independent sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{matmul, matmul_a_bt, matmul_at_b, uniform_matrix, DenseMatrix, RandomStream};

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn column_sums(m: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn add_row_vector(m: &mut DenseMatrix, v: &[f64]) {
    for r in 0..m.rows() {
        for (x, b) in m.row_mut(r).iter_mut().zip(v) {
            *x += b;
        }
    }
}

/// `y = x W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn init(fan_in: usize, fan_out: usize, stream: &mut RandomStream) -> Self {
        Affine {
            weight: uniform_matrix(fan_in, fan_out, glorot_limit(fan_in, fan_out), stream),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "affine layer expects {} inputs, batch has {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut y = matmul(x, &self.weight)?;
        add_row_vector(&mut y, &self.bias);
        Ok(y)
    }

    /// Gradients wrt weight, bias and input, given the forward input `x`.
    pub fn backward(&self, x: &DenseMatrix, dy: &DenseMatrix) -> Result<(ParamGrads, DenseMatrix)> {
        if dy.shape() != (x.rows(), self.output_dim()) {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                dy.rows(),
                dy.cols(),
                x.rows(),
                self.output_dim()
            )));
        }
        let weight = matmul_at_b(x, dy)?;
        let bias = column_sums(dy);
        let dx = matmul_a_bt(dy, &self.weight)?;
        Ok((ParamGrads { weight, bias }, dx))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    /// Weight kept on the old running statistics at each update.
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

/// Per-channel batch normalization with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub config: BatchNormConfig,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    /// Normalized activations before scale and shift.
    pub x_hat: DenseMatrix,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize, config: BatchNormConfig) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            config,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics; running statistics are untouched.
    pub fn forward_batch(&self, z: &DenseMatrix) -> Result<(DenseMatrix, BatchNormCache)> {
        let (n, c) = z.shape();
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got {c}",
                self.channels()
            )));
        }
        if n < 2 {
            return Err(Error::BatchStats(format!(
                "batch statistics need at least 2 rows, got {n}"
            )));
        }
        let nf = n as f64;
        let mean: Vec<f64> = column_sums(z).into_iter().map(|s| s / nf).collect();
        let mut var = vec![0.0; c];
        for r in 0..n {
            for ((v, x), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + self.config.eps).sqrt())
            .collect();
        let mut x_hat = DenseMatrix::zeros(n, c);
        let mut y = DenseMatrix::zeros(n, c);
        for r in 0..n {
            let zr = z.row(r);
            for j in 0..c {
                let xh = (zr[j] - mean[j]) * inv_std[j];
                x_hat[(r, j)] = xh;
                y[(r, j)] = self.gamma[j] * xh + self.beta[j];
            }
        }
        Ok((
            y,
            BatchNormCache {
                x_hat,
                mean,
                var,
                inv_std,
            },
        ))
    }

    /// Folds batch statistics into the running estimates (unbiased variance).
    pub fn update_running(&mut self, cache: &BatchNormCache) {
        let n = cache.x_hat.rows() as f64;
        let m = self.config.momentum;
        for j in 0..self.channels() {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * cache.mean[j];
            let unbiased = cache.var[j] * n / (n - 1.0);
            self.running_var[j] = m * self.running_var[j] + (1.0 - m) * unbiased;
        }
    }

    pub fn forward_eval(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        if z.cols() != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got {}",
                self.channels(),
                z.cols()
            )));
        }
        let scale: Vec<f64> = (0..self.channels())
            .map(|j| self.gamma[j] / (self.running_var[j] + self.config.eps).sqrt())
            .collect();
        let mut y = z.clone();
        for r in 0..y.rows() {
            for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.running_mean[j]) * scale[j] + self.beta[j];
            }
        }
        Ok(y)
    }

    /// Returns `(dz, dgamma, dbeta)`, including the batch-statistics terms.
    pub fn backward(
        &self,
        cache: &BatchNormCache,
        dy: &DenseMatrix,
    ) -> Result<(DenseMatrix, Vec<f64>, Vec<f64>)> {
        let (n, c) = cache.x_hat.shape();
        if dy.shape() != (n, c) {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {n}x{c}",
                dy.rows(),
                dy.cols()
            )));
        }
        let mut dgamma = vec![0.0; c];
        let dbeta = column_sums(dy);
        for r in 0..n {
            for ((g, d), xh) in dgamma.iter_mut().zip(dy.row(r)).zip(cache.x_hat.row(r)) {
                *g += d * xh;
            }
        }
        // dz = (γ·inv_std / n) · (n·dy − Σdy − x̂·Σ(dy·x̂))
        let nf = n as f64;
        let mut dz = DenseMatrix::zeros(n, c);
        for r in 0..n {
            for j in 0..c {
                dz[(r, j)] = self.gamma[j] * cache.inv_std[j] / nf
                    * (nf * dy[(r, j)] - dbeta[j] - cache.x_hat[(r, j)] * dgamma[j]);
            }
        }
        Ok((dz, dgamma, dbeta))
    }
}

pub fn leaky_relu(z: &DenseMatrix, slope: f64) -> DenseMatrix {
    z.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Gradient through leaky ReLU given the pre-activation `z`.
pub fn leaky_relu_backward(z: &DenseMatrix, dy: &DenseMatrix, slope: f64) -> DenseMatrix {
    debug_assert_eq!(z.shape(), dy.shape());
    let data = z
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    DenseMatrix::new(z.rows(), z.cols(), data).expect("shape preserved")
}

/// Stride-1 convolution along sequences with an odd kernel of `m` taps and
/// `(m - 1) / 2` zero padding on each side, so lengths are preserved.
///
/// The kernel is stored as an `(m · c_in) × c_out` matrix whose row
/// `t · c_in + ch` holds tap `t` of input channel `ch`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub kernel: DenseMatrix,
    pub bias: Vec<f64>,
    pub taps: usize,
}

impl Conv1d {
    pub fn init(c_in: usize, c_out: usize, taps: usize, stream: &mut RandomStream) -> Result<Self> {
        check_taps(taps)?;
        let limit = glorot_limit(c_in * taps, c_out * taps);
        Ok(Conv1d {
            kernel: uniform_matrix(taps * c_in, c_out, limit, stream),
            bias: vec![0.0; c_out],
            taps,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.rows() / self.taps
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.cols()
    }

    fn im2col(&self, x: &DenseMatrix, len: usize) -> Result<DenseMatrix> {
        let c_in = self.in_channels();
        if x.cols() != c_in {
            return Err(Error::Shape(format!(
                "convolution expects {c_in} input channels, got {}",
                x.cols()
            )));
        }
        if len == 0 || !x.rows().is_multiple_of(len) {
            return Err(Error::Shape(format!(
                "{} rows do not split into sequences of length {len}",
                x.rows()
            )));
        }
        let pad = (self.taps / 2) as isize;
        let mut cols = DenseMatrix::zeros(x.rows(), self.taps * c_in);
        for seq in 0..x.rows() / len {
            let base = seq * len;
            for h in 0..len {
                let row = cols.row_mut(base + h);
                for t in 0..self.taps {
                    let src = h as isize + t as isize - pad;
                    if (0..len as isize).contains(&src) {
                        row[t * c_in..(t + 1) * c_in].copy_from_slice(x.row(base + src as usize));
                    }
                }
            }
        }
        Ok(cols)
    }

    /// Returns the output and the unfolded input needed by `backward`.
    pub fn forward(&self, x: &DenseMatrix, len: usize) -> Result<(DenseMatrix, DenseMatrix)> {
        let cols = self.im2col(x, len)?;
        let mut y = matmul(&cols, &self.kernel)?;
        add_row_vector(&mut y, &self.bias);
        Ok((y, cols))
    }

    pub fn backward(
        &self,
        cols: &DenseMatrix,
        dy: &DenseMatrix,
        len: usize,
    ) -> Result<(ParamGrads, DenseMatrix)> {
        if dy.shape() != (cols.rows(), self.out_channels()) {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                dy.rows(),
                dy.cols(),
                cols.rows(),
                self.out_channels()
            )));
        }
        let kernel = matmul_at_b(cols, dy)?;
        let bias = column_sums(dy);
        let dcols = matmul_a_bt(dy, &self.kernel)?;
        let c_in = self.in_channels();
        let pad = (self.taps / 2) as isize;
        let mut dx = DenseMatrix::zeros(cols.rows(), c_in);
        for seq in 0..cols.rows() / len {
            let base = seq * len;
            for h in 0..len {
                let grad_row = dcols.row(base + h);
                for t in 0..self.taps {
                    let src = h as isize + t as isize - pad;
                    if (0..len as isize).contains(&src) {
                        let dst = dx.row_mut(base + src as usize);
                        for (d, g) in dst.iter_mut().zip(&grad_row[t * c_in..(t + 1) * c_in]) {
                            *d += g;
                        }
                    }
                }
            }
        }
        Ok((
            ParamGrads {
                weight: kernel,
                bias,
            },
            dx,
        ))
    }
}

pub(crate) fn check_taps(taps: usize) -> Result<()> {
    if taps == 0 || taps.is_multiple_of(2) {
        return Err(Error::Config(vec![format!(
            "kernel size must be odd, got {taps}"
        )]));
    }
    Ok(())
}
