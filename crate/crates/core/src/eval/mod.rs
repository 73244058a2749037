//! Generalization metrics and the experiment drivers built on them: error
//! against training-set size, against dropout rate, on out-of-distribution
//! bins, and inference timing.
//!
//! Every model is scored in tendon space. Pose variants are mapped through
//! the strict Gram–Schmidt frame and the helical tendon offsets first.

mod ood;
mod study;
mod timing;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ood::{ood_generate, ood_sample_design, OodBin, OodSet, DEFAULT_OOD_BINS, OOD_MAX_FAILURE_RATE};
pub use study::{
    convergence_study, dataset_fingerprint, dropout_study, ood_study, run_cells, write_study_csv, CellCache,
    CellOutcome, CellSpec, ConvergenceConfig, DropoutConfig, OodStudyConfig, StudyCommon, StudyReport, StudyRow,
    STUDY_CSV_HEADER,
};
pub use timing::{
    hardware_descriptor, random_inference_batches, timing_bench, train_epoch_bench, BenchConfig, TimingRow,
    TIMING_CSV_HEADER,
};

use crate::dataset::{Dataset, DatasetError};
use crate::format::FormatError;
use crate::neuralops::{pose_rows_to_tendons, Architecture, Batch, DenseArray, Model, ModelError};
use crate::training::TrainError;
use crate::{POSE_CHANNELS, TENDON_CHANNELS};

/// Designs per inference chunk; bounds activation memory on large sets.
pub const EVAL_CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("relative error undefined: {0}")]
    UndefinedMetric(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: ModelError,
    },
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// `‖y − ŷ‖₂ / ‖y‖₂` over the flattened arrays.
pub fn relative_l2(y: &DenseArray, y_hat: &DenseArray) -> Result<f64, EvalError> {
    if y.shape != y_hat.shape {
        return Err(EvalError::Shape(format!("{:?} against {:?}", y.shape, y_hat.shape)));
    }
    relative_l2_slices(&y.values, &y_hat.values)
}

/// Slice form of [`relative_l2`].
pub fn relative_l2_slices(y: &[f64], y_hat: &[f64]) -> Result<f64, EvalError> {
    if y.len() != y_hat.len() {
        return Err(EvalError::Shape(format!("{} values against {}", y.len(), y_hat.len())));
    }
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(EvalError::UndefinedMetric("target has zero norm".into()));
    }
    let diff = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

/// Predicted tendon positions for `indices`, `len × nodes × 12`, computed in
/// chunks. Degenerate pose frames are reported with their dataset index.
pub fn predict_tendons(model: &Model, ds: &Dataset, indices: &[usize]) -> Result<Vec<f64>, EvalError> {
    let parts: Vec<Result<Vec<f64>, EvalError>> = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| predict_chunk(model, ds, chunk))
        .collect();
    let mut out = Vec::with_capacity(indices.len() * ds.num_nodes() * TENDON_CHANNELS);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

fn predict_chunk(model: &Model, ds: &Dataset, chunk: &[usize]) -> Result<Vec<f64>, EvalError> {
    let batch = Batch::gather(ds, chunk);
    let raw = model.forward_raw(&batch)?;
    if !model.architecture().is_pose() {
        return Ok(raw);
    }
    let n = batch.nodes;
    let mut out = Vec::with_capacity(chunk.len() * n * TENDON_CHANNELS);
    for (b, &index) in chunk.iter().enumerate() {
        let rows = &raw[b * n * POSE_CHANNELS..(b + 1) * n * POSE_CHANNELS];
        let tendons = pose_rows_to_tendons(rows, &batch.designs[b], &batch.arclengths[b * n..(b + 1) * n])
            .map_err(|source| EvalError::Sample { index, source })?;
        out.extend(tendons);
    }
    Ok(out)
}

/// Relative ℓ₂ error of every design in `indices`, in order.
pub fn sample_errors(model: &Model, ds: &Dataset, indices: &[usize]) -> Result<Vec<f64>, EvalError> {
    let pred = predict_tendons(model, ds, indices)?;
    let m = ds.num_nodes() * TENDON_CHANNELS;
    indices
        .iter()
        .enumerate()
        .map(|(b, &j)| {
            relative_l2_slices(ds.target(j), &pred[b * m..(b + 1) * m]).map_err(|e| match e {
                EvalError::UndefinedMetric(msg) => EvalError::UndefinedMetric(format!("sample {j}: {msg}")),
                other => other,
            })
        })
        .collect()
}

/// Mean relative ℓ₂ error over `indices`.
pub fn mean_error(model: &Model, ds: &Dataset, indices: &[usize]) -> Result<f64, EvalError> {
    if indices.is_empty() {
        return Err(EvalError::Config("no samples to evaluate".into()));
    }
    let errors = sample_errors(model, ds, indices)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedError {
    pub seed: u64,
    pub error: f64,
}

/// Test-set error of one architecture, averaged over training seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: Architecture,
    pub per_seed: Vec<SeedError>,
    pub mean_error: f64,
    /// `(1 − mean_error) · 100`.
    pub accuracy: f64,
    pub seed_count: usize,
    pub samples: usize,
}

impl EvalReport {
    pub fn from_seed_errors(model: Architecture, per_seed: Vec<SeedError>, samples: usize) -> Result<Self, EvalError> {
        if per_seed.is_empty() {
            return Err(EvalError::Config("report needs at least one seed".into()));
        }
        let mean_error = per_seed.iter().map(|s| s.error).sum::<f64>() / per_seed.len() as f64;
        Ok(EvalReport {
            model,
            seed_count: per_seed.len(),
            per_seed,
            mean_error,
            accuracy: (1.0 - mean_error) * 100.0,
            samples,
        })
    }
}

/// Scores trained models of `architecture` (one per seed) on `indices`.
pub fn evaluate_model(
    architecture: Architecture,
    models: &[(u64, Model)],
    ds: &Dataset,
    indices: &[usize],
) -> Result<EvalReport, EvalError> {
    let mut per_seed = Vec::with_capacity(models.len());
    for (seed, model) in models {
        if model.architecture() != architecture {
            return Err(EvalError::Config(format!(
                "model for seed {seed} is a {}, expected {architecture}",
                model.architecture()
            )));
        }
        per_seed.push(SeedError {
            seed: *seed,
            error: mean_error(model, ds, indices)?,
        });
    }
    EvalReport::from_seed_errors(architecture, per_seed, indices.len())
}
