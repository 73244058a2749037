//! Out-of-distribution designs: every parameter range is stretched past its
//! training bound by a random percentage of its width, and the parameter is
//! drawn from the stretched part only.
//!
//! A bin with non-positive percentages shrinks the ranges instead and samples
//! the whole shrunk range, which gives an in-distribution reference. Signed
//! ranges (the pitches) are stretched or shrunk at both ends.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::{solve_samples, Dataset, DatasetManifest, Interval, NormalizationSpec, ParameterRanges};
use crate::rng::Domain;
use crate::rodmodel::{DesignVector, SolverConfig};
use crate::DESIGN_DIM;

/// Largest tolerated share of failed solves per bin.
pub const OOD_MAX_FAILURE_RATE: f64 = 0.10;

/// Extension band in percent of each range's width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodBin {
    pub lower: f64,
    pub upper: f64,
}

pub const DEFAULT_OOD_BINS: [OodBin; 5] = [
    OodBin::new(-5.0, 0.0),
    OodBin::new(0.0, 5.0),
    OodBin::new(5.0, 10.0),
    OodBin::new(10.0, 15.0),
    OodBin::new(15.0, 20.0),
];

impl OodBin {
    pub const fn new(lower: f64, upper: f64) -> Self {
        OodBin { lower, upper }
    }

    /// Bins are 5 points wide and lie entirely on one side of zero.
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = self.lower.is_finite()
            && self.upper.is_finite()
            && ((self.upper - self.lower) - 5.0).abs() < 1e-12
            && (self.upper <= 0.0 || self.lower >= 0.0)
            && self.lower > -50.0;
        if !ok {
            return Err(EvalError::Config(format!(
                "OOD bin [{}, {}] must be 5 points wide, on one side of 0, above -50",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// In-distribution reference bin (non-positive extensions).
    pub fn is_reference(&self) -> bool {
        self.upper <= 0.0
    }

    pub fn label(&self) -> String {
        format!("{}..{}", self.lower, self.upper)
    }

    /// Seed of this bin's sample streams; depends only on the bin bounds.
    fn stream_seed(&self, seed: u64) -> u64 {
        let mut z = self.lower.to_bits() ^ self.upper.to_bits().rotate_left(29);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        seed ^ z ^ (z >> 31)
    }
}

/// Solved designs of one bin.
#[derive(Clone, Debug)]
pub struct OodSet {
    pub bin: OodBin,
    pub dataset: Dataset,
    /// Failed solves that were replaced by fresh draws.
    pub failures: usize,
}

impl OodSet {
    /// All samples of the bin (OOD sets are scored as a whole, not split).
    pub fn indices(&self) -> Vec<usize> {
        (0..self.dataset.len()).collect()
    }
}

/// Draws one design for `bin`. Per parameter: a percentage `p ~ U[lower, upper]`,
/// then, for `p > 0`, a value uniform on the `p`% extension beyond the
/// range's upper end (either end for signed ranges); for `p ≤ 0`, a value
/// uniform on the range shrunk by `|p|`%.
pub fn ood_sample_design<R: Rng + ?Sized>(rng: &mut R, ranges: &ParameterRanges, bin: &OodBin) -> DesignVector {
    let values: [f64; DESIGN_DIM] = std::array::from_fn(|k| {
        let iv = ranges.slot(k);
        let p = Interval::new(bin.lower, bin.upper).sample(rng);
        let e = p / 100.0 * iv.width();
        let signed = iv.low < 0.0 && iv.high > 0.0;
        if p <= 0.0 {
            let shrunk = if signed {
                Interval::new(iv.low - e, iv.high + e)
            } else {
                Interval::new(iv.low, iv.high + e)
            };
            shrunk.sample(rng)
        } else {
            // u ∈ (0, 1], so the value is strictly outside the training range.
            let u = 1.0 - rng.gen::<f64>();
            if signed && rng.gen_bool(0.5) {
                iv.low - u * e
            } else {
                iv.high + u * e
            }
        }
    });
    DesignVector::from_array(&values)
}

/// Generates and solves `count_per_bin` designs for every bin. Failed solves
/// are redrawn; a bin aborts when more than 10% of its solves fail.
pub fn ood_generate(
    bins: &[OodBin],
    count_per_bin: usize,
    seed: u64,
    ranges: &ParameterRanges,
    solver: &SolverConfig,
) -> Result<Vec<OodSet>, EvalError> {
    if count_per_bin == 0 {
        return Err(EvalError::Config("count_per_bin must be at least 1".into()));
    }
    ranges.validate().map_err(EvalError::Config)?;
    let mut sets = Vec::with_capacity(bins.len());
    for bin in bins {
        bin.validate()?;
        let bin_seed = bin.stream_seed(seed);
        let (samples, failures) = solve_samples(
            count_per_bin,
            bin_seed,
            Domain::Ood,
            solver,
            OOD_MAX_FAILURE_RATE,
            |rng| ood_sample_design(rng, ranges, bin),
        )?;
        if failures > 0 {
            log::info!("OOD bin {}: {failures} failed solves redrawn", bin.label());
        }
        let manifest = DatasetManifest {
            num_samples: count_per_bin,
            num_nodes: solver.steps + 1,
            num_tendons: crate::NUM_TENDONS,
            seed: bin_seed,
            origin: format!("ood:{}", bin.label()),
            ranges: *ranges,
            normalization: NormalizationSpec::default(),
            solver: solver.clone(),
            failures,
            generator: crate::dataset::generator_tag(),
        };
        sets.push(OodSet {
            bin: *bin,
            dataset: Dataset::from_solutions(samples, manifest),
            failures,
        });
    }
    Ok(sets)
}
