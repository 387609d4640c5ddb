use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, RandomStream};
use crate::regnet::layers::{
    check_taps, leaky_relu, leaky_relu_backward, BatchNorm, BatchNormCache, BatchNormConfig,
    Conv1d, ParamGrads,
};

/// Channel plan of the six-layer shape-preserving network.
pub const CHANNEL_PLAN: [usize; 6] = [32, 64, 128, 64, 32, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub kernel_m: usize,
    pub leaky_slope: f64,
    pub batch_norm: BatchNormConfig,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            kernel_m: 3,
            leaky_slope: 0.01,
            batch_norm: BatchNormConfig::default(),
        }
    }
}

/// Fully convolutional regressor over `(d + 1) × c` weight matrices.
///
/// Every kernel is `m × 1`: it slides along the `d + 1` axis and never mixes
/// class columns. Each column of each sample is therefore an independent
/// one-channel sequence of length `d + 1`; only batch-norm statistics are
/// shared across columns, and only in train mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvRegressor {
    pub config: ConvConfig,
    pub layers: Vec<Conv1d>,
    pub norms: Vec<BatchNorm>,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    shape: (usize, usize),
    batch: usize,
    cols: Vec<DenseMatrix>,
    normalized: Vec<DenseMatrix>,
    bn: Vec<BatchNormCache>,
}

impl ConvCache {
    pub fn batch_norm(&self, layer: usize) -> &BatchNormCache {
        &self.bn[layer]
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub layers: Vec<ParamGrads>,
    pub norms: Vec<(Vec<f64>, Vec<f64>)>,
    pub input: Vec<DenseMatrix>,
}

impl ConvGrads {
    /// Same order as [`ConvRegressor::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(22);
        for (i, l) in self.layers.iter().enumerate() {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
            if let Some((g, b)) = self.norms.get(i) {
                out.push(g.as_slice());
                out.push(b.as_slice());
            }
        }
        out
    }
}

/// Samples `(d+1) × c` to rows ordered (sample, column, position).
fn to_sequences(batch: &[DenseMatrix]) -> DenseMatrix {
    let (len, c) = batch[0].shape();
    let mut data = Vec::with_capacity(batch.len() * len * c);
    for m in batch {
        for w in 0..c {
            for h in 0..len {
                data.push(m[(h, w)]);
            }
        }
    }
    DenseMatrix::new(batch.len() * c * len, 1, data).expect("finite inputs")
}

fn from_sequences(x: &DenseMatrix, batch: usize, (len, c): (usize, usize)) -> Vec<DenseMatrix> {
    (0..batch)
        .map(|s| {
            let mut m = DenseMatrix::zeros(len, c);
            for w in 0..c {
                for h in 0..len {
                    m[(h, w)] = x[((s * c + w) * len + h, 0)];
                }
            }
            m
        })
        .collect()
}

impl ConvRegressor {
    pub fn new(config: ConvConfig, stream: &mut RandomStream) -> Result<Self> {
        check_taps(config.kernel_m)?;
        let mut layers = Vec::with_capacity(6);
        let mut c_in = 1;
        for &c_out in &CHANNEL_PLAN {
            layers.push(Conv1d::init(c_in, c_out, config.kernel_m, stream)?);
            c_in = c_out;
        }
        let norms = CHANNEL_PLAN[..5]
            .iter()
            .map(|&c| BatchNorm::new(c, config.batch_norm))
            .collect();
        Ok(ConvRegressor {
            config,
            layers,
            norms,
        })
    }

    fn check_batch(&self, batch: &[DenseMatrix]) -> Result<(usize, usize)> {
        let first = batch
            .first()
            .ok_or_else(|| Error::Argument("empty batch".into()))?;
        let shape = first.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::Shape("input matrices must be non-empty".into()));
        }
        if let Some(i) = batch.iter().position(|m| m.shape() != shape) {
            return Err(Error::Shape(format!(
                "sample {i} is {}x{}, sample 0 is {}x{}",
                batch[i].rows(),
                batch[i].cols(),
                shape.0,
                shape.1
            )));
        }
        Ok(shape)
    }

    pub fn forward_batch(&self, batch: &[DenseMatrix]) -> Result<(Vec<DenseMatrix>, ConvCache)> {
        let shape = self.check_batch(batch)?;
        if batch.len() < 2 {
            return Err(Error::BatchStats(format!(
                "train-mode forward needs a batch of at least 2, got {}",
                batch.len()
            )));
        }
        let len = shape.0;
        let mut h = to_sequences(batch);
        let mut cols = Vec::with_capacity(6);
        let mut normalized = Vec::with_capacity(5);
        let mut bn = Vec::with_capacity(5);
        for i in 0..6 {
            let (z, unfolded) = self.layers[i].forward(&h, len)?;
            cols.push(unfolded);
            if i < 5 {
                let (y, cache) = self.norms[i].forward_batch(&z)?;
                h = leaky_relu(&y, self.config.leaky_slope);
                normalized.push(y);
                bn.push(cache);
            } else {
                h = z;
            }
        }
        Ok((
            from_sequences(&h, batch.len(), shape),
            ConvCache {
                shape,
                batch: batch.len(),
                cols,
                normalized,
                bn,
            },
        ))
    }

    pub fn forward_train(
        &mut self,
        batch: &[DenseMatrix],
    ) -> Result<(Vec<DenseMatrix>, ConvCache)> {
        let (out, cache) = self.forward_batch(batch)?;
        for (norm, c) in self.norms.iter_mut().zip(&cache.bn) {
            norm.update_running(c);
        }
        Ok((out, cache))
    }

    pub fn forward_eval(&self, batch: &[DenseMatrix]) -> Result<Vec<DenseMatrix>> {
        let shape = self.check_batch(batch)?;
        let mut h = to_sequences(batch);
        for i in 0..6 {
            let (z, _) = self.layers[i].forward(&h, shape.0)?;
            h = if i < 5 {
                leaky_relu(&self.norms[i].forward_eval(&z)?, self.config.leaky_slope)
            } else {
                z
            };
        }
        Ok(from_sequences(&h, batch.len(), shape))
    }

    pub fn backward(&self, cache: &ConvCache, upstream: &[DenseMatrix]) -> Result<ConvGrads> {
        if upstream.len() != cache.batch || upstream.iter().any(|m| m.shape() != cache.shape) {
            return Err(Error::Shape(format!(
                "upstream gradient must be {} matrices of {}x{}",
                cache.batch, cache.shape.0, cache.shape.1
            )));
        }
        let len = cache.shape.0;
        let mut layer_grads = Vec::with_capacity(6);
        let mut norm_grads = Vec::with_capacity(5);
        let mut dh = to_sequences(upstream);
        for i in (0..6).rev() {
            let dz = if i < 5 {
                let dy = leaky_relu_backward(&cache.normalized[i], &dh, self.config.leaky_slope);
                let (dz, dg, db) = self.norms[i].backward(&cache.bn[i], &dy)?;
                norm_grads.push((dg, db));
                dz
            } else {
                dh
            };
            let (g, dx) = self.layers[i].backward(&cache.cols[i], &dz, len)?;
            layer_grads.push(g);
            dh = dx;
        }
        layer_grads.reverse();
        norm_grads.reverse();
        Ok(ConvGrads {
            layers: layer_grads,
            norms: norm_grads,
            input: from_sequences(&dh, cache.batch, cache.shape),
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(22);
        let mut norms = self.norms.iter_mut();
        for layer in self.layers.iter_mut() {
            out.push(layer.kernel.data_mut());
            out.push(layer.bias.as_mut_slice());
            if let Some(n) = norms.next() {
                out.push(n.gamma.as_mut_slice());
                out.push(n.beta.as_mut_slice());
            }
        }
        out
    }

    pub(crate) fn state_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(layer.kernel.data());
            out.push(layer.bias.as_slice());
            if let Some(n) = self.norms.get(i) {
                out.push(n.gamma.as_slice());
                out.push(n.beta.as_slice());
                out.push(n.running_mean.as_slice());
                out.push(n.running_var.as_slice());
            }
        }
        out
    }

    pub(crate) fn state_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for layer in self.layers.iter_mut() {
            out.push(layer.kernel.data_mut());
            out.push(layer.bias.as_mut_slice());
            if let Some(n) = norms.next() {
                out.push(n.gamma.as_mut_slice());
                out.push(n.beta.as_mut_slice());
                out.push(n.running_mean.as_mut_slice());
                out.push(n.running_var.as_mut_slice());
            }
        }
        out
    }
}
