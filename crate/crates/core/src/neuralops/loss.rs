//! Per-design losses: mean over nodes of `Σᵢ ‖rᵢ − r̃ᵢ‖²`.

use nalgebra::{Matrix3, Vector3};

use super::frames::{gram_schmidt_frame, pose_to_tendons, SmoothFrame};
use super::{DenseArray, ModelError};
use crate::rodmodel::{tendon_offset, DesignVector};
use crate::{NUM_TENDONS, POSE_CHANNELS, TENDON_CHANNELS};

fn check_pair(pred: &DenseArray, pred_channels: usize, target: &DenseArray) -> Result<usize, ModelError> {
    let [n, c] = pred.dims2()?;
    let [tn, tc] = target.dims2()?;
    if c != pred_channels || tc != TENDON_CHANNELS || tn != n || n == 0 {
        return Err(ModelError::Shape(format!(
            "prediction {:?} does not pair with target {:?}",
            pred.shape, target.shape
        )));
    }
    Ok(n)
}

/// Loss on directly predicted tendon positions (`n × 12`).
pub fn loss_tendon(pred: &DenseArray, target: &DenseArray) -> Result<f64, ModelError> {
    let n = check_pair(pred, TENDON_CHANNELS, target)?;
    Ok(squared_distance(&pred.values, &target.values) / n as f64)
}

/// Loss on a predicted pose (`n × 9`: position, then raw frame columns `a₁`,
/// `a₂`), mapped to tendon positions through a strict Gram–Schmidt frame.
pub fn loss_pose(
    pose: &DenseArray,
    target: &DenseArray,
    design: &DesignVector,
    s_grid: &[f64],
) -> Result<f64, ModelError> {
    let n = check_pair(pose, POSE_CHANNELS, target)?;
    if s_grid.len() != n {
        return Err(ModelError::Shape(format!("{} arclengths for {n} nodes", s_grid.len())));
    }
    let tendons = pose_rows_to_tendons(&pose.values, design, s_grid)?;
    Ok(squared_distance(&tendons, &target.values) / n as f64)
}

/// Maps `n × 9` pose rows to `n × 12` tendon rows with the strict frame.
pub fn pose_rows_to_tendons(pose: &[f64], design: &DesignVector, s_grid: &[f64]) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(s_grid.len() * TENDON_CHANNELS);
    for (row, s) in pose.chunks_exact(POSE_CHANNELS).zip(s_grid) {
        let (r, a1, a2) = split_pose(row);
        let frame = gram_schmidt_frame(&a1, &a2)?;
        for t in pose_to_tendons(&r, &frame, design, *s)? {
            out.extend_from_slice(t.as_slice());
        }
    }
    Ok(out)
}

fn split_pose(row: &[f64]) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let v = |k: usize| Vector3::new(row[k], row[k + 1], row[k + 2]);
    (v(0), v(3), v(6))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Loss of one design's `n × 12` prediction and its gradient, scaled by `weight`.
pub(crate) fn tendon_loss_grad(pred: &[f64], target: &[f64], weight: f64, d_pred: &mut [f64]) -> f64 {
    let n = (pred.len() / TENDON_CHANNELS) as f64;
    let scale = 2.0 * weight / n;
    for ((d, p), t) in d_pred.iter_mut().zip(pred).zip(target) {
        *d = scale * (p - t);
    }
    squared_distance(pred, target) / n
}

/// Tendon offsets `ρᵢ(s)` for every node, `n × 4` vectors.
pub(crate) fn offsets_on_grid(
    design: &DesignVector,
    s_grid: &[f64],
) -> Result<Vec<[Vector3<f64>; NUM_TENDONS]>, ModelError> {
    s_grid
        .iter()
        .map(|&s| {
            let mut rho = [Vector3::zeros(); NUM_TENDONS];
            for (i, r) in rho.iter_mut().enumerate() {
                *r = tendon_offset(design, i, s).map_err(|e| ModelError::Shape(e.to_string()))?;
            }
            Ok(rho)
        })
        .collect()
}

/// Training-time pose loss with the smoothed frame, its gradient on the raw
/// pose rows (scaled by `weight`), and the implied tendon positions.
pub(crate) fn pose_loss_grad(
    pose: &[f64],
    target: &[f64],
    offsets: &[[Vector3<f64>; NUM_TENDONS]],
    weight: f64,
    d_pose: &mut [f64],
) -> f64 {
    let n = offsets.len();
    let scale = 2.0 * weight / n as f64;
    let mut total = 0.0;
    for (j, rho) in offsets.iter().enumerate() {
        let row = &pose[j * POSE_CHANNELS..(j + 1) * POSE_CHANNELS];
        let (r, a1, a2) = split_pose(row);
        let frame = SmoothFrame::new(a1, a2);
        let mut d_r = Vector3::zeros();
        let mut d_frame = Matrix3::zeros();
        for (i, rho_i) in rho.iter().enumerate() {
            let tgt = Vector3::from_column_slice(&target[j * TENDON_CHANNELS + 3 * i..j * TENDON_CHANNELS + 3 * i + 3]);
            let diff = r + frame.frame * rho_i - tgt;
            total += diff.norm_squared();
            let g = diff * scale;
            d_r += g;
            d_frame += g * rho_i.transpose();
        }
        let (d_a1, d_a2) = frame.vjp(&d_frame);
        let out = &mut d_pose[j * POSE_CHANNELS..(j + 1) * POSE_CHANNELS];
        out[..3].copy_from_slice(d_r.as_slice());
        out[3..6].copy_from_slice(d_a1.as_slice());
        out[6..].copy_from_slice(d_a2.as_slice());
    }
    total / n as f64
}
