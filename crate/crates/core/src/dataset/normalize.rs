use serde::{Deserialize, Serialize};

use crate::rodmodel::DesignVector;
use crate::{DESIGN_DIM, NUM_TENDONS};

/// Fixed multiplicative scales that bring every design coordinate to order one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationSpec {
    pub tendon_offset: f64,
    pub tendon_pitch: f64,
    pub tendon_tension: f64,
    pub backbone_radius: f64,
    pub length: f64,
    pub youngs_modulus: f64,
    /// Feed arclength to the models in meters, ignoring `arclength`.
    pub arclength_passthrough: bool,
    /// Scale applied to the arclength model input when not passed through.
    pub arclength: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            tendon_offset: 100.0,
            tendon_pitch: 0.1,
            tendon_tension: 1.0,
            backbone_radius: 1000.0,
            length: 10.0,
            youngs_modulus: 1e-10,
            arclength_passthrough: false,
            arclength: 10.0,
        }
    }
}

impl NormalizationSpec {
    /// Scale of each flat design slot.
    pub fn scales(&self) -> [f64; DESIGN_DIM] {
        std::array::from_fn(|k| match k {
            _ if k < NUM_TENDONS => self.tendon_offset,
            _ if k < 2 * NUM_TENDONS => self.tendon_pitch,
            _ if k < 3 * NUM_TENDONS => self.tendon_tension,
            12 => self.backbone_radius,
            13 => self.length,
            _ => self.youngs_modulus,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self
            .scales()
            .iter()
            .chain([&self.arclength])
            .all(|s| s.is_finite() && *s != 0.0)
        {
            Ok(())
        } else {
            Err("normalization scales must be finite and nonzero".into())
        }
    }

    pub fn normalize(&self, design: &DesignVector) -> [f64; DESIGN_DIM] {
        let raw = design.to_array();
        let scales = self.scales();
        std::array::from_fn(|k| raw[k] * scales[k])
    }

    /// Model-facing value of a physical arclength.
    pub fn arclength_input(&self, s: f64) -> f64 {
        if self.arclength_passthrough {
            s
        } else {
            s * self.arclength
        }
    }

    pub fn denormalize(&self, values: &[f64; DESIGN_DIM]) -> DesignVector {
        let scales = self.scales();
        DesignVector::from_array(&std::array::from_fn(|k| values[k] / scales[k]))
    }
}

pub fn normalize_design(design: &DesignVector, spec: &NormalizationSpec) -> [f64; DESIGN_DIM] {
    spec.normalize(design)
}
