//! Paired (design, equilibrium) data: sampling, generation, normalization,
//! train/test split, batching and the binary dataset file.

mod io;
mod normalize;
mod ranges;

pub use io::{load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use normalize::{normalize_design, NormalizationSpec};
pub use ranges::{sample_design, Interval, ParameterRanges};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::FormatError;
use crate::rng::{stream, Domain};
use crate::rodmodel::{solve_equilibrium, DesignVector, EquilibriumConfig, SolverConfig, SolverError};
use crate::{DESIGN_DIM, TENDON_CHANNELS};

/// Fraction of samples held out for testing.
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
/// Largest tolerated share of failed solves during in-range generation.
pub const MAX_FAILURE_RATE: f64 = 0.05;
/// Draws per sample before generation gives up on that slot.
const MAX_ATTEMPTS_PER_SAMPLE: usize = 64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{failures} of {attempts} solves failed (allowed share {max_rate}); last error: {last_error}")]
    FailureRate {
        failures: usize,
        attempts: usize,
        max_rate: f64,
        last_error: SolverError,
    },
    #[error("sample {index}: no solvable design after {attempts} draws ({last_error})")]
    Exhausted {
        index: usize,
        attempts: usize,
        last_error: SolverError,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Disjoint train/test index lists, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_fraction: f64,
    pub seed: u64,
}

/// Provenance stored in the dataset header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_samples: usize,
    pub num_nodes: usize,
    pub num_tendons: usize,
    pub seed: u64,
    /// Which random domain generated the designs ("sample", or "ood:<bin>").
    pub origin: String,
    pub ranges: ParameterRanges,
    pub normalization: NormalizationSpec,
    pub solver: SolverConfig,
    /// Failed solves that were replaced by fresh draws.
    pub failures: usize,
    pub generator: String,
}

/// In-memory dataset. Arrays are flat and row-major:
/// `arclengths` is `N × n`, `targets` is `N × n × 12` (x, y, z of tendons 1..4 per node).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub designs: Vec<DesignVector>,
    pub normalized: Vec<[f64; DESIGN_DIM]>,
    pub arclengths: Vec<f64>,
    pub targets: Vec<f64>,
    pub split: Split,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.manifest.num_nodes
    }

    pub fn arclengths_of(&self, j: usize) -> &[f64] {
        let n = self.num_nodes();
        &self.arclengths[j * n..(j + 1) * n]
    }

    pub fn target(&self, j: usize) -> &[f64] {
        let m = self.num_nodes() * TENDON_CHANNELS;
        &self.targets[j * m..(j + 1) * m]
    }

    /// Assembles a dataset from solved samples and populates the default split.
    pub fn from_solutions(samples: Vec<(DesignVector, EquilibriumConfig)>, manifest: DatasetManifest) -> Self {
        let normalized = samples
            .iter()
            .map(|(d, _)| manifest.normalization.normalize(d))
            .collect();
        let mut arclengths = Vec::with_capacity(samples.len() * manifest.num_nodes);
        let mut targets = Vec::with_capacity(samples.len() * manifest.num_nodes * TENDON_CHANNELS);
        for (_, eq) in &samples {
            arclengths.extend_from_slice(&eq.arclengths);
            targets.extend(eq.tendon_positions_flat());
        }
        let seed = manifest.seed;
        let ds = Dataset {
            designs: samples.into_iter().map(|(d, _)| d).collect(),
            normalized,
            arclengths,
            targets,
            split: Split::default(),
            manifest,
        };
        split_dataset(ds, DEFAULT_TEST_FRACTION, seed).expect("default fraction is valid")
    }

    /// Copy whose training split keeps only the first `n` entries of a
    /// seeded permutation of the training pool, so that smaller subsets are
    /// prefixes of larger ones. The test split is untouched.
    pub fn nested_train_subset(&self, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
        if n == 0 || n > self.split.train.len() {
            return Err(DatasetError::InvalidArgument(format!(
                "subset size {n} outside 1..={}",
                self.split.train.len()
            )));
        }
        let mut order = self.split.train.clone();
        order.shuffle(&mut stream(seed, Domain::Subset, 0));
        let mut train = order[..n].to_vec();
        train.sort_unstable();
        let mut out = self.clone();
        out.split.train = train;
        Ok(out)
    }
}

/// Solves `count` designs drawn by `sampler`, sample `j` from its own random
/// stream `(seed, domain, j)`, so results do not depend on thread count.
/// Returns the solved pairs and the number of failed draws.
pub fn solve_samples<F>(
    count: usize,
    seed: u64,
    domain: Domain,
    solver: &SolverConfig,
    max_failure_rate: f64,
    sampler: F,
) -> Result<(Vec<(DesignVector, EquilibriumConfig)>, usize), DatasetError>
where
    F: Fn(&mut ChaCha8Rng) -> DesignVector + Sync,
{
    let results: Vec<_> = (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(seed, domain, j as u64);
            let mut last_error = None;
            for failures in 0..MAX_ATTEMPTS_PER_SAMPLE {
                let design = sampler(&mut rng);
                match solve_equilibrium(&design, solver) {
                    Ok(eq) => return Ok((design, eq, failures, last_error)),
                    Err(e) => {
                        log::debug!("sample {j}: {e}; redrawing");
                        last_error = Some(e);
                    }
                }
            }
            Err(DatasetError::Exhausted {
                index: j,
                attempts: MAX_ATTEMPTS_PER_SAMPLE,
                last_error: last_error.expect("at least one attempt"),
            })
        })
        .collect();
    let mut samples = Vec::with_capacity(count);
    let mut failures = 0;
    let mut last_error = None;
    for r in results {
        let (d, eq, f, e) = r?;
        failures += f;
        last_error = e.or(last_error);
        samples.push((d, eq));
    }
    let attempts = count + failures;
    if failures as f64 > max_failure_rate * attempts as f64 {
        return Err(DatasetError::FailureRate {
            failures,
            attempts,
            max_rate: max_failure_rate,
            last_error: last_error.expect("failures imply an error"),
        });
    }
    Ok((samples, failures))
}

/// Samples and solves `n` designs uniformly from `ranges`.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    ranges: &ParameterRanges,
    solver: &SolverConfig,
) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::InvalidArgument("dataset size must be at least 1".into()));
    }
    ranges.validate().map_err(DatasetError::InvalidArgument)?;
    let (samples, failures) = solve_samples(n, seed, Domain::Sample, solver, MAX_FAILURE_RATE, |rng| {
        sample_design(rng, ranges)
    })?;
    if failures > 0 {
        log::info!("{failures} failed solves were redrawn");
    }
    let manifest = DatasetManifest {
        num_samples: n,
        num_nodes: solver.steps + 1,
        num_tendons: crate::NUM_TENDONS,
        seed,
        origin: "sample".into(),
        ranges: *ranges,
        normalization: NormalizationSpec::default(),
        solver: solver.clone(),
        failures,
        generator: generator_tag(),
    };
    Ok(Dataset::from_solutions(samples, manifest))
}

pub(crate) fn generator_tag() -> String {
    format!("tdcrop {}", env!("CARGO_PKG_VERSION"))
}

/// Uniformly random disjoint split with `round(test_fraction · N)` test samples.
pub fn split_dataset(mut ds: Dataset, test_fraction: f64, seed: u64) -> Result<Dataset, DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = ds.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Domain::Split, 0));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    ds.split = Split {
        train,
        test,
        test_fraction,
        seed,
    };
    Ok(ds)
}

/// Shuffles `indices` with the epoch's stream and cuts them into blocks of
/// `batch_size` (the last one may be short).
pub fn batches(indices: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order = indices.to_vec();
    order.shuffle(&mut stream(seed, Domain::Shuffle, epoch));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
