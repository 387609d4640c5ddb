use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, RandomStream};
use crate::regnet::layers::{
    leaky_relu, leaky_relu_backward, Affine, BatchNorm, BatchNormCache, BatchNormConfig, ParamGrads,
};

/// Shape and hyper-parameters of the fully connected regressor: four affine
/// layers, the first three followed by batch norm and leaky ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: [usize; 3],
    pub output_dim: usize,
    pub leaky_slope: f64,
    pub batch_norm: BatchNormConfig,
}

impl MlpConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden: [512, 512, 512],
            output_dim,
            leaky_slope: 0.01,
            batch_norm: BatchNormConfig::default(),
        }
    }

    pub fn with_hidden(mut self, width: usize) -> Self {
        self.hidden = [width; 3];
        self
    }

    fn widths(&self) -> [usize; 5] {
        [
            self.input_dim,
            self.hidden[0],
            self.hidden[1],
            self.hidden[2],
            self.output_dim,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpRegressor {
    pub config: MlpConfig,
    pub layers: Vec<Affine>,
    pub norms: Vec<BatchNorm>,
}

/// Intermediate values of a batch-statistics forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Input to each affine layer.
    inputs: Vec<DenseMatrix>,
    /// Batch-norm output (pre-activation) for each hidden layer.
    normalized: Vec<DenseMatrix>,
    bn: Vec<BatchNormCache>,
}

impl MlpCache {
    pub fn batch_norm(&self, layer: usize) -> &BatchNormCache {
        &self.bn[layer]
    }
}

#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub layers: Vec<ParamGrads>,
    /// `(dgamma, dbeta)` per hidden layer.
    pub norms: Vec<(Vec<f64>, Vec<f64>)>,
    pub input: DenseMatrix,
}

impl MlpGrads {
    /// Same order as [`MlpRegressor::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(14);
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

impl MlpRegressor {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn new(config: MlpConfig, stream: &mut RandomStream) -> Self {
        let w = config.widths();
        let layers = (0..4)
            .map(|i| Affine::init(w[i], w[i + 1], stream))
            .collect();
        let norms = (0..3)
            .map(|i| BatchNorm::new(w[i + 1], config.batch_norm))
            .collect();
        MlpRegressor {
            config,
            layers,
            norms,
        }
    }

    /// A network computing the identity on `dim`-vectors in eval mode:
    /// identity affine maps, unit batch norm with zero epsilon, and a leaky
    /// slope of 1.
    pub fn identity(dim: usize) -> Self {
        let config = MlpConfig {
            input_dim: dim,
            hidden: [dim; 3],
            output_dim: dim,
            leaky_slope: 1.0,
            batch_norm: BatchNormConfig {
                momentum: 0.9,
                eps: 0.0,
            },
        };
        let layers = (0..4)
            .map(|_| Affine {
                weight: DenseMatrix::identity(dim),
                bias: vec![0.0; dim],
            })
            .collect();
        let norms = (0..3)
            .map(|_| BatchNorm::new(dim, config.batch_norm))
            .collect();
        MlpRegressor {
            config,
            layers,
            norms,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.rows() == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "regressor expects {}-d inputs, batch is {}x{}",
                self.input_dim(),
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass with batch statistics, leaving running statistics alone.
    pub fn forward_batch(&self, x: &DenseMatrix) -> Result<(DenseMatrix, MlpCache)> {
        self.check_input(x)?;
        if x.rows() < 2 {
            return Err(Error::BatchStats(format!(
                "train-mode forward needs a batch of at least 2, got {}",
                x.rows()
            )));
        }
        let mut inputs = Vec::with_capacity(4);
        let mut normalized = Vec::with_capacity(3);
        let mut bn = Vec::with_capacity(3);
        let mut h = x.clone();
        for i in 0..3 {
            let z = self.layers[i].forward(&h)?;
            let (y, cache) = self.norms[i].forward_batch(&z)?;
            let next = leaky_relu(&y, self.config.leaky_slope);
            inputs.push(h);
            normalized.push(y);
            bn.push(cache);
            h = next;
        }
        let out = self.layers[3].forward(&h)?;
        inputs.push(h);
        Ok((
            out,
            MlpCache {
                inputs,
                normalized,
                bn,
            },
        ))
    }

    /// Train-mode forward: batch statistics, then running-stat update.
    pub fn forward_train(&mut self, x: &DenseMatrix) -> Result<(DenseMatrix, MlpCache)> {
        let (out, cache) = self.forward_batch(x)?;
        for (norm, c) in self.norms.iter_mut().zip(&cache.bn) {
            norm.update_running(c);
        }
        Ok((out, cache))
    }

    /// Eval-mode forward using running statistics; any batch size >= 1.
    pub fn forward_eval(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for i in 0..3 {
            let z = self.layers[i].forward(&h)?;
            let y = self.norms[i].forward_eval(&z)?;
            h = leaky_relu(&y, self.config.leaky_slope);
        }
        self.layers[3].forward(&h)
    }

    pub fn backward(&self, cache: &MlpCache, upstream: &DenseMatrix) -> Result<MlpGrads> {
        let n = cache.inputs[0].rows();
        if upstream.shape() != (n, self.output_dim()) {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                n,
                self.output_dim()
            )));
        }
        let mut layer_grads = Vec::with_capacity(4);
        let mut norm_grads = Vec::with_capacity(3);
        let (g, mut dh) = self.layers[3].backward(&cache.inputs[3], upstream)?;
        layer_grads.push(g);
        for i in (0..3).rev() {
            let dy = leaky_relu_backward(&cache.normalized[i], &dh, self.config.leaky_slope);
            let (dz, dgamma, dbeta) = self.norms[i].backward(&cache.bn[i], &dy)?;
            norm_grads.push((dgamma, dbeta));
            let (g, dx) = self.layers[i].backward(&cache.inputs[i], &dz)?;
            layer_grads.push(g);
            dh = dx;
        }
        layer_grads.reverse();
        norm_grads.reverse();
        Ok(MlpGrads {
            layers: layer_grads,
            norms: norm_grads,
            input: dh,
        })
    }

    /// Trainable parameters: per layer weight, bias, then (hidden layers
    /// only) batch-norm scale and shift.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(14);
        let mut norms = self.norms.iter_mut();
        for layer in self.layers.iter_mut() {
            out.push(layer.weight.data_mut());
            out.push(layer.bias.as_mut_slice());
            if let Some(n) = norms.next() {
                out.push(n.gamma.as_mut_slice());
                out.push(n.beta.as_mut_slice());
            }
        }
        out
    }

    /// Every stored value (trainable and running statistics), in checkpoint
    /// order.
    pub(crate) fn state_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push(layer.weight.data());
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
            out.push(layer.weight.data_mut());
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
