//! Neural-operator surrogates: DeepONet and FNO, each predicting tendon
//! positions directly or a backbone pose, with losses and reverse-mode
//! gradients written out by hand.
//!
//! All parameters of a model live in one flat `Vec<f64>` described by a
//! [`ParamLayout`] of named blocks; gradients use the same layout.

mod deeponet;
mod dropout;
mod fno;
mod frames;
mod linalg;
mod loss;
mod mlp;
mod model;
mod params;
mod spectral;

use thiserror::Error;

pub use deeponet::DeepOnetNet;
pub use dropout::{apply_dropout, dropout_mask};
pub use fno::{FnoNet, FourierBlock, FNO_INPUT_CHANNELS};
pub use frames::{gram_schmidt_frame, pose_to_tendons, GS_EPSILON};
pub use linalg::{matmul, tanh};
pub use loss::{loss_pose, loss_tendon, pose_rows_to_tendons};
pub use mlp::{mlp_forward, Activation, DenseLayer, MlpLayout, MlpParams};
pub use model::{deeponet_forward, fno_forward, Architecture, Batch, BatchLoss, Model, ModelConfig};
pub use params::{Block, Init, ParamLayout};
pub use spectral::{fourier_layer, fourier_layer_fft, FourierWeights, SpectralBasis, SpectralMixing};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),
    #[error("non-finite values in {block}")]
    NonFinite { block: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Row-major array of finite `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, ModelError> {
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(ModelError::Shape(format!(
                "shape {shape:?} holds {len} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { block: "array".into() });
        }
        Ok(DenseArray { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        DenseArray {
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2], ModelError> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(ModelError::Shape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }
}
