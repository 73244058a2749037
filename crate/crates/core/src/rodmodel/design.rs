use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Result, SolverError};
use crate::{DESIGN_DIM, NUM_TENDONS};

/// One robot design together with its actuation.
///
/// The flat layout used by datasets and models is
/// `[ρ₁..ρ₄, φ₁..φ₄, τ₁..τ₄, r, L, E]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    /// Radial tendon offsets ρᵢ (m).
    pub tendon_offsets: [f64; NUM_TENDONS],
    /// Helical routing pitches φᵢ (rad/m).
    pub tendon_pitches: [f64; NUM_TENDONS],
    /// Tendon tensions τᵢ (N).
    pub tendon_tensions: [f64; NUM_TENDONS],
    /// Backbone radius r (m).
    pub backbone_radius: f64,
    /// Backbone length L (m).
    pub length: f64,
    /// Young's modulus E (Pa).
    pub youngs_modulus: f64,
}

impl DesignVector {
    pub fn from_array(values: &[f64; DESIGN_DIM]) -> Self {
        let mut d = DesignVector {
            tendon_offsets: [0.0; NUM_TENDONS],
            tendon_pitches: [0.0; NUM_TENDONS],
            tendon_tensions: [0.0; NUM_TENDONS],
            backbone_radius: values[3 * NUM_TENDONS],
            length: values[3 * NUM_TENDONS + 1],
            youngs_modulus: values[3 * NUM_TENDONS + 2],
        };
        for i in 0..NUM_TENDONS {
            d.tendon_offsets[i] = values[i];
            d.tendon_pitches[i] = values[NUM_TENDONS + i];
            d.tendon_tensions[i] = values[2 * NUM_TENDONS + i];
        }
        d
    }

    pub fn to_array(&self) -> [f64; DESIGN_DIM] {
        let mut out = [0.0; DESIGN_DIM];
        for i in 0..NUM_TENDONS {
            out[i] = self.tendon_offsets[i];
            out[NUM_TENDONS + i] = self.tendon_pitches[i];
            out[2 * NUM_TENDONS + i] = self.tendon_tensions[i];
        }
        out[3 * NUM_TENDONS] = self.backbone_radius;
        out[3 * NUM_TENDONS + 1] = self.length;
        out[3 * NUM_TENDONS + 2] = self.youngs_modulus;
        out
    }

    /// Same geometry and material, tensions multiplied by `factor`.
    pub fn with_tension_scale(&self, factor: f64) -> Self {
        let mut d = *self;
        for t in &mut d.tendon_tensions {
            *t *= factor;
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(SolverError::InputDomain("design contains non-finite values".into()));
        }
        if let Some(i) = self.tendon_offsets.iter().position(|&rho| rho <= 0.0) {
            return Err(SolverError::InputDomain(format!(
                "tendon {} offset must be positive",
                i + 1
            )));
        }
        if let Some(i) = self.tendon_tensions.iter().position(|&tau| tau < 0.0) {
            return Err(SolverError::InputDomain(format!(
                "tendon {} tension must be non-negative",
                i + 1
            )));
        }
        if self.length <= 0.0 {
            return Err(SolverError::InputDomain("backbone length must be positive".into()));
        }
        if self.backbone_radius <= 0.0 {
            return Err(SolverError::InputDomain("backbone radius must be positive".into()));
        }
        if self.youngs_modulus <= 0.0 {
            return Err(SolverError::InputDomain("Young's modulus must be positive".into()));
        }
        Ok(())
    }
}

/// Base angle ψᵢ of tendon `tendon` (0-based): four tendons at 90° spacing.
pub fn base_angle(tendon: usize) -> f64 {
    2.0 * PI * tendon as f64 / NUM_TENDONS as f64
}

/// Body-frame tendon offset ρᵢ(s) and its first two arclength derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TendonOffset {
    pub value: Vector3<f64>,
    pub d1: Vector3<f64>,
    pub d2: Vector3<f64>,
}

impl TendonOffset {
    /// Helical offset with base angle `angle` (ψᵢ plus any routing phase).
    pub(crate) fn helical(radius: f64, pitch: f64, angle: f64, s: f64) -> Self {
        let theta = angle + pitch * s;
        let (sin, cos) = theta.sin_cos();
        TendonOffset {
            value: Vector3::new(radius * cos, radius * sin, 0.0),
            d1: Vector3::new(-radius * pitch * sin, radius * pitch * cos, 0.0),
            d2: Vector3::new(-radius * pitch * pitch * cos, -radius * pitch * pitch * sin, 0.0),
        }
    }
}

/// ρᵢ(s) = ρᵢ·(cos(ψᵢ + φᵢ s), sin(ψᵢ + φᵢ s), 0) for the 0-based tendon index.
pub fn tendon_offset(design: &DesignVector, tendon: usize, s: f64) -> Result<Vector3<f64>> {
    tendon_offset_with_phase(design, tendon, s, 0.0).map(|o| o.value)
}

pub(crate) fn tendon_offset_with_phase(
    design: &DesignVector,
    tendon: usize,
    s: f64,
    phase: f64,
) -> Result<TendonOffset> {
    if tendon >= NUM_TENDONS {
        return Err(SolverError::InputDomain(format!(
            "tendon index {tendon} out of range 0..{NUM_TENDONS}"
        )));
    }
    let slack = 1e-12 * design.length.abs().max(1.0);
    if !(s >= -slack && s <= design.length + slack) {
        return Err(SolverError::InputDomain(format!(
            "arclength {s} outside [0, {}]",
            design.length
        )));
    }
    Ok(TendonOffset::helical(
        design.tendon_offsets[tendon],
        design.tendon_pitches[tendon],
        base_angle(tendon) + phase,
        s,
    ))
}
