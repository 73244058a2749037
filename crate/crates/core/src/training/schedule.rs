use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Cyclical cosine annealing with linear warmup, indexed by epoch.
///
/// The horizon splits into `cycles` equal cycles. Cycle `k` ramps linearly
/// from its start value to `peak·γᵏ` over the first `warmup_fraction` of the
/// cycle, then follows a half cosine down to `end`. Cycle 0 starts at
/// `initial`; later cycles restart from `end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub warmup_fraction: f64,
    pub peak: f64,
    pub end: f64,
    pub cycles: usize,
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-4,
            warmup_fraction: 0.3,
            peak: 3e-3,
            end: 5e-6,
            cycles: 4,
            gamma: 0.7,
            horizon: 100_000,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.initial > 0.0
            && self.peak > 0.0
            && self.end > 0.0
            && self.gamma > 0.0
            && self.warmup_fraction > 0.0
            && self.warmup_fraction < 1.0
            && self.cycles >= 1
            && self.horizon >= self.cycles;
        if !ok {
            return Err(TrainError::Config(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    pub fn cycle_length(&self) -> f64 {
        self.horizon as f64 / self.cycles as f64
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64, TrainError> {
        if epoch >= self.horizon {
            return Err(TrainError::Config(format!(
                "epoch {epoch} beyond the schedule horizon {}",
                self.horizon
            )));
        }
        let len = self.cycle_length();
        let e = epoch as f64;
        let k = ((e / len).floor() as usize).min(self.cycles - 1);
        let frac = (e - k as f64 * len) / len;
        let start = if k == 0 { self.initial } else { self.end };
        let peak = self.peak * self.gamma.powi(k as i32);
        let w = self.warmup_fraction;
        Ok(if frac < w {
            start + (peak - start) * frac / w
        } else {
            let phase = (frac - w) / (1.0 - w);
            self.end + (peak - self.end) * 0.5 * (1.0 + (PI * phase).cos())
        })
    }
}

/// Free-function form of [`LrSchedule::lr_at`].
pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> Result<f64, TrainError> {
    schedule.lr_at(epoch)
}
