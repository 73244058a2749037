//! Wall-clock benchmarks: batch inference on random designs and single
//! training epochs. Each figure is the median of several timed runs taken
//! after untimed warmup runs.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, EVAL_CHUNK};
use crate::dataset::{sample_design, Dataset, DatasetManifest, NormalizationSpec, ParameterRanges};
use crate::neuralops::{Architecture, Batch, Model, ModelConfig};
use crate::rng::{stream, Domain};
use crate::rodmodel::SolverConfig;
use crate::training::{train, TrainConfig};
use crate::{DESIGN_DIM, NUM_NODES, TENDON_CHANNELS};

pub const TIMING_CSV_HEADER: &str = "model,kind,workload,seconds,repeats,hardware";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: Architecture,
    /// `inference` (workload = designs) or `train_epoch` (workload = training designs).
    pub kind: String,
    pub workload: usize,
    /// Median wall-clock seconds.
    pub seconds: f64,
    pub repeats: usize,
    pub hardware: String,
}

impl TimingRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:e},{},\"{}\"",
            self.model, self.kind, self.workload, self.seconds, self.repeats, self.hardware
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub architectures: Vec<Architecture>,
    /// Designs per inference batch.
    pub workloads: Vec<usize>,
    /// Training-set sizes for one-epoch timings (none by default).
    pub train_sizes: Vec<usize>,
    pub repeats: usize,
    pub warmups: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            architectures: Architecture::ALL.to_vec(),
            workloads: vec![1, 1_000, 80_000],
            train_sizes: Vec::new(),
            repeats: 5,
            warmups: 2,
            seed: 0,
            batch_size: 256,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.repeats < 5 {
            return Err(EvalError::Config(format!(
                "timings need at least 5 repetitions, got {}",
                self.repeats
            )));
        }
        if self.workloads.iter().chain(&self.train_sizes).any(|&w| w == 0) || self.batch_size == 0 {
            return Err(EvalError::Config("workloads and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// CPU model (when the platform reports one), architecture and worker count.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!(
        "{cpu}; {}; {} threads",
        std::env::consts::ARCH,
        rayon::current_num_threads()
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn timed<F: FnMut() -> Result<(), EvalError>>(repeats: usize, warmups: usize, mut f: F) -> Result<f64, EvalError> {
    for _ in 0..warmups {
        f()?;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Random in-range designs on the uniform 42-node grid, cut into inference
/// chunks (no targets).
pub fn random_inference_batches(count: usize, seed: u64) -> Vec<Batch> {
    let ranges = ParameterRanges::default();
    let norm = NormalizationSpec::default();
    let mut rng = stream(seed, Domain::Sample, 0);
    let designs: Vec<_> = (0..count).map(|_| sample_design(&mut rng, &ranges)).collect();
    designs
        .chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut batch = Batch {
                designs: chunk.to_vec(),
                inputs: Vec::with_capacity(chunk.len() * DESIGN_DIM),
                arclengths: Vec::with_capacity(chunk.len() * NUM_NODES),
                s_inputs: Vec::with_capacity(chunk.len() * NUM_NODES),
                targets: Vec::new(),
                nodes: NUM_NODES,
            };
            for d in chunk {
                batch.inputs.extend(norm.normalize(d));
                for j in 0..NUM_NODES {
                    let s = d.length * j as f64 / (NUM_NODES - 1) as f64;
                    batch.arclengths.push(s);
                    batch.s_inputs.push(norm.arclength_input(s));
                }
            }
            batch
        })
        .collect()
}

/// Median seconds to predict tendon positions for each workload size.
pub fn timing_bench(
    model: &Model,
    workloads: &[usize],
    repeats: usize,
    warmups: usize,
    seed: u64,
) -> Result<Vec<TimingRow>, EvalError> {
    let hardware = hardware_descriptor();
    let mut rows = Vec::with_capacity(workloads.len());
    for &workload in workloads {
        let chunks = random_inference_batches(workload, seed);
        let seconds = timed(repeats, warmups, || {
            let sums: Result<Vec<f64>, _> = chunks
                .par_iter()
                .map(|b| model.predict_tendons(b).map(|p| p.iter().sum::<f64>()))
                .collect();
            black_box(sums?);
            Ok(())
        })?;
        rows.push(TimingRow {
            model: model.architecture(),
            kind: "inference".into(),
            workload,
            seconds,
            repeats,
            hardware: hardware.clone(),
        });
    }
    Ok(rows)
}

/// Dataset of `n` random designs with random targets, for timing only.
fn timing_dataset(n: usize, seed: u64) -> Dataset {
    let chunks = random_inference_batches(n, seed);
    let mut rng = stream(seed, Domain::Sample, 1);
    let designs: Vec<_> = chunks.iter().flat_map(|b| b.designs.clone()).collect();
    let arclengths = chunks.iter().flat_map(|b| b.arclengths.clone()).collect();
    let targets = (0..n * NUM_NODES * TENDON_CHANNELS)
        .map(|_| rng.gen_range(-0.1..0.4))
        .collect();
    let manifest = DatasetManifest {
        num_samples: n,
        num_nodes: NUM_NODES,
        num_tendons: crate::NUM_TENDONS,
        seed,
        origin: "timing".into(),
        ranges: ParameterRanges::default(),
        normalization: NormalizationSpec::default(),
        solver: SolverConfig::default(),
        failures: 0,
        generator: crate::dataset::generator_tag(),
    };
    let normalized = designs.iter().map(|d| manifest.normalization.normalize(d)).collect();
    let mut ds = Dataset {
        designs,
        normalized,
        arclengths,
        targets,
        split: Default::default(),
        manifest,
    };
    ds.split.train = (0..n).collect();
    ds
}

/// Median seconds of one training epoch on `n` designs.
pub fn train_epoch_bench(
    config: &ModelConfig,
    n: usize,
    batch_size: usize,
    repeats: usize,
    warmups: usize,
    seed: u64,
) -> Result<TimingRow, EvalError> {
    let ds = timing_dataset(n, seed);
    let mut train_config = TrainConfig {
        model: config.clone(),
        seed,
        batch_size,
        max_epochs: 1,
        checkpoint_every: 0,
        ..Default::default()
    };
    train_config.output_dir = None;
    let seconds = timed(repeats, warmups, || {
        black_box(train(&ds, &train_config)?);
        Ok(())
    })?;
    Ok(TimingRow {
        model: config.architecture,
        kind: "train_epoch".into(),
        workload: n,
        seconds,
        repeats,
        hardware: hardware_descriptor(),
    })
}
