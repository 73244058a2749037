use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rodmodel::DesignVector;
use crate::{DESIGN_DIM, NUM_TENDONS};

/// Closed sampling interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Interval { low, high }
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.low..=self.high).contains(&v)
    }

    /// Uniform draw; a degenerate interval returns its single value exactly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        if self.low == self.high {
            self.low
        } else {
            self.low + u * (self.high - self.low)
        }
    }
}

/// Per-parameter sampling bounds. Defaults are the training ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterRanges {
    /// ρᵢ (m)
    pub tendon_offset: Interval,
    /// φᵢ (rad/m)
    pub tendon_pitch: Interval,
    /// τᵢ (N)
    pub tendon_tension: Interval,
    /// r (m)
    pub backbone_radius: Interval,
    /// L (m)
    pub length: Interval,
    /// E (Pa)
    pub youngs_modulus: Interval,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        ParameterRanges {
            tendon_offset: Interval::new(0.005, 0.01),
            tendon_pitch: Interval::new(-20.0, 20.0),
            tendon_tension: Interval::new(0.0, 5.0),
            backbone_radius: Interval::new(0.0005, 0.0015),
            length: Interval::new(0.1, 0.35),
            youngs_modulus: Interval::new(15.5e9, 45.5e9),
        }
    }
}

impl ParameterRanges {
    /// Interval of flat design slot `k` (layout of [`DesignVector::to_array`]).
    pub fn slot(&self, k: usize) -> Interval {
        match k {
            _ if k < NUM_TENDONS => self.tendon_offset,
            _ if k < 2 * NUM_TENDONS => self.tendon_pitch,
            _ if k < 3 * NUM_TENDONS => self.tendon_tension,
            12 => self.backbone_radius,
            13 => self.length,
            14 => self.youngs_modulus,
            _ => panic!("design slot {k} out of range"),
        }
    }

    /// Checks `low ≤ high` everywhere and that every sample is a valid design.
    pub fn validate(&self) -> Result<(), String> {
        for k in 0..DESIGN_DIM {
            let iv = self.slot(k);
            if !(iv.low.is_finite() && iv.high.is_finite() && iv.low <= iv.high) {
                return Err(format!("slot {k}: invalid interval [{}, {}]", iv.low, iv.high));
            }
        }
        let positive = [
            ("tendon_offset", self.tendon_offset),
            ("backbone_radius", self.backbone_radius),
            ("length", self.length),
            ("youngs_modulus", self.youngs_modulus),
        ];
        for (name, iv) in positive {
            if iv.low <= 0.0 {
                return Err(format!("{name} must be strictly positive, got low = {}", iv.low));
            }
        }
        if self.tendon_tension.low < 0.0 {
            return Err(format!(
                "tendon_tension must be non-negative, got low = {}",
                self.tendon_tension.low
            ));
        }
        Ok(())
    }

    pub fn contains(&self, design: &DesignVector) -> bool {
        design
            .to_array()
            .iter()
            .enumerate()
            .all(|(k, &v)| self.slot(k).contains(v))
    }
}

/// Draws the 15 design scalars independently and uniformly, in flat-layout order.
pub fn sample_design<R: Rng + ?Sized>(rng: &mut R, ranges: &ParameterRanges) -> DesignVector {
    let values: [f64; DESIGN_DIM] = std::array::from_fn(|k| ranges.slot(k).sample(rng));
    DesignVector::from_array(&values)
}
