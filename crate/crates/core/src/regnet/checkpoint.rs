use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, RandomStream};
use crate::pipelines::InputModality;
use crate::regnet::{ConvConfig, ConvRegressor, MlpConfig, MlpRegressor};
use crate::svm::{read_f64le, write_f64le};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Either regression network.
#[derive(Clone, Debug, PartialEq)]
pub enum Regressor {
    Mlp(MlpRegressor),
    Conv(ConvRegressor),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum Architecture {
    Mlp(MlpConfig),
    Conv(ConvConfig),
}

impl Regressor {
    pub fn build(arch: &Architecture, stream: &mut RandomStream) -> Result<Self> {
        Ok(match arch {
            Architecture::Mlp(cfg) => Regressor::Mlp(MlpRegressor::new(cfg.clone(), stream)),
            Architecture::Conv(cfg) => Regressor::Conv(ConvRegressor::new(cfg.clone(), stream)?),
        })
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Regressor::Mlp(n) => Architecture::Mlp(n.config.clone()),
            Regressor::Conv(n) => Architecture::Conv(n.config.clone()),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Regressor::Mlp(n) => n.params_mut(),
            Regressor::Conv(n) => n.params_mut(),
        }
    }

    pub fn param_sizes(&mut self) -> Vec<usize> {
        self.params_mut().iter().map(|p| p.len()).collect()
    }

    fn state_slices(&self) -> Vec<&[f64]> {
        match self {
            Regressor::Mlp(n) => n.state_slices(),
            Regressor::Conv(n) => n.state_slices(),
        }
    }

    fn state_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Regressor::Mlp(n) => n.state_slices_mut(),
            Regressor::Conv(n) => n.state_slices_mut(),
        }
    }

    /// Eval-mode forward of a single input (`(len, 1)` for the MLP).
    pub fn predict(&self, input: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Regressor::Mlp(n) => {
                let row = DenseMatrix::new(1, input.rows() * input.cols(), input.data().to_vec())?;
                let out = n.forward_eval(&row)?;
                DenseMatrix::new(out.cols(), 1, out.into_data())
            }
            Regressor::Conv(n) => Ok(n.forward_eval(std::slice::from_ref(input))?.remove(0)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Descriptor {
    version: u32,
    modality: InputModality,
    input_shape: (usize, usize),
    output_shape: (usize, usize),
    network: Architecture,
    parameter_count: usize,
}

/// A trained regressor together with the input contract it was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub modality: InputModality,
    pub input_shape: (usize, usize),
    pub output_shape: (usize, usize),
    pub regressor: Regressor,
}

/// The parameter payload lives next to the descriptor with extension `p64le`.
pub fn payload_path(descriptor: &Path) -> PathBuf {
    descriptor.with_extension("p64le")
}

impl Checkpoint {
    /// Writes the JSON descriptor to `path` and every stored value (including
    /// batch-norm running statistics) to the sibling payload file. Optimizer
    /// moments are not saved.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let values: Vec<f64> = self.regressor.state_slices().concat();
        let desc = Descriptor {
            version: CHECKPOINT_VERSION,
            modality: self.modality,
            input_shape: self.input_shape,
            output_shape: self.output_shape,
            network: self.regressor.architecture(),
            parameter_count: values.len(),
        };
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string_pretty(&desc).expect("descriptor serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
        write_f64le(&payload_path(path), &values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let desc: Descriptor =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if desc.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported version {}", desc.version),
            ));
        }
        let values = read_f64le(&payload_path(path))?;
        // Initial values are overwritten below; the stream only fixes shapes.
        let mut regressor = Regressor::build(&desc.network, &mut RandomStream::new(0))?;
        let mut slots = regressor.state_slices_mut();
        let expected: usize = slots.iter().map(|s| s.len()).sum();
        if values.len() != expected || desc.parameter_count != expected {
            return Err(Error::parse(
                payload_path(path),
                format!(
                    "architecture needs {expected} values, descriptor declares {}, payload holds {}",
                    desc.parameter_count,
                    values.len()
                ),
            ));
        }
        let mut offset = 0;
        for slot in slots.iter_mut() {
            slot.copy_from_slice(&values[offset..offset + slot.len()]);
            offset += slot.len();
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(payload_path(path), "non-finite parameter"));
        }
        Ok(Checkpoint {
            modality: desc.modality,
            input_shape: desc.input_shape,
            output_shape: desc.output_shape,
            regressor,
        })
    }
}
