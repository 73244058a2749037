//! Experiment drivers. A study expands into cells (architecture × setting ×
//! seed), each of which trains one model on a nested subset of a master
//! dataset and is scored on its held-out split.
//!
//! Trained cells are cached on disk under a key derived from the full
//! training configuration and the dataset fingerprint, so an interrupted or
//! repeated study never retrains a finished cell. Cells that share a
//! configuration (for example the q = 0 dropout cell and the matching
//! convergence cell) share a cache entry.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ood::{ood_generate, OodBin, DEFAULT_OOD_BINS};
use super::{mean_error, EvalError};
use crate::dataset::{load_dataset, save_dataset, Dataset, ParameterRanges};
use crate::format::{self, FormatError};
use crate::neuralops::{Architecture, Model, ModelConfig};
use crate::rodmodel::SolverConfig;
use crate::training::{load_checkpoint, save_checkpoint, train, Checkpoint, StopReason, TrainConfig};

pub const STUDY_CSV_HEADER: &str = "study,model,seed,param,value,error,seconds";

/// Settings shared by every study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyCommon {
    /// Master dataset file (used by the command-line driver).
    pub dataset: Option<PathBuf>,
    pub architectures: Vec<Architecture>,
    pub seeds: Vec<u64>,
    /// Template for every cell; architecture, seed, subset size and dropout
    /// rate are set per cell.
    pub train: TrainConfig,
    /// Directory of the cell cache; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for StudyCommon {
    fn default() -> Self {
        StudyCommon {
            dataset: None,
            architectures: Architecture::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            train: TrainConfig {
                max_epochs: 150,
                checkpoint_every: 0,
                ..Default::default()
            },
            cache_dir: None,
        }
    }
}

impl StudyCommon {
    fn validate(&self) -> Result<(), EvalError> {
        if self.architectures.is_empty() || self.seeds.is_empty() {
            return Err(EvalError::Config(
                "a study needs at least one architecture and one seed".into(),
            ));
        }
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub common: StudyCommon,
    /// Training-set sizes; duplicates are dropped.
    pub n_list: Vec<usize>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            common: StudyCommon::default(),
            n_list: vec![100, 500, 2_000, 8_000],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutConfig {
    pub common: StudyCommon,
    /// Dropout rates in [0, 0.5]; duplicates are dropped.
    pub q_list: Vec<f64>,
    /// Training-set size (`None`: the whole training split).
    pub n_train: Option<usize>,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            common: StudyCommon::default(),
            q_list: vec![0.0, 0.1, 0.2, 0.3],
            n_train: Some(2_000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodStudyConfig {
    pub common: StudyCommon,
    pub n_train: Option<usize>,
    pub bins: Vec<OodBin>,
    pub count_per_bin: usize,
    pub ood_seed: u64,
}

impl Default for OodStudyConfig {
    fn default() -> Self {
        OodStudyConfig {
            common: StudyCommon::default(),
            n_train: Some(2_000),
            bins: DEFAULT_OOD_BINS.to_vec(),
            count_per_bin: 1_000,
            ood_seed: 0,
        }
    }
}

/// One trained model of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub architecture: Architecture,
    pub seed: u64,
    pub n_train: Option<usize>,
    pub dropout: f64,
}

impl CellSpec {
    /// Full training configuration of the cell.
    pub fn train_config(&self, common: &StudyCommon) -> TrainConfig {
        let mut c = common.train.clone();
        c.model = ModelConfig {
            architecture: self.architecture,
            dropout: self.dropout,
            ..common.train.model.clone()
        };
        c.seed = self.seed;
        c.train_subset = self.n_train;
        c.dataset = None;
        c.output_dir = None;
        c.checkpoint_every = 0;
        c
    }
}

/// A trained (or cache-loaded) cell.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub spec: CellSpec,
    pub key: String,
    pub model: Model,
    pub epochs: usize,
    pub stop: StopReason,
    pub train_seconds: f64,
    pub final_train_error: f64,
    pub cached: bool,
}

#[derive(Serialize, Deserialize)]
struct CellSummary {
    spec: CellSpec,
    key: String,
    epochs: usize,
    stop: StopReason,
    train_seconds: f64,
    final_train_error: f64,
}

/// On-disk store of finished cells: `<dir>/cells/<key>.ckpt` holds the
/// model, `<key>.json` the run summary. The summary is written last, so a
/// cell counts as finished only once both files exist.
#[derive(Clone, Debug)]
pub struct CellCache {
    dir: PathBuf,
}

impl CellCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CellCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        let cells = self.dir.join("cells");
        (cells.join(format!("{key}.ckpt")), cells.join(format!("{key}.json")))
    }

    fn load(&self, key: &str, expected: &TrainConfig) -> Option<CellOutcome> {
        let (ckpt_path, json_path) = self.paths(key);
        let summary: CellSummary = serde_json::from_slice(&std::fs::read(&json_path).ok()?).ok()?;
        let ckpt = match load_checkpoint(&ckpt_path) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", ckpt_path.display());
                return None;
            }
        };
        if summary.key != key || ckpt.model.config != expected.model {
            return None;
        }
        Some(CellOutcome {
            spec: summary.spec,
            key: key.to_string(),
            model: ckpt.model,
            epochs: summary.epochs,
            stop: summary.stop,
            train_seconds: summary.train_seconds,
            final_train_error: summary.final_train_error,
            cached: true,
        })
    }

    fn store(&self, outcome: &CellOutcome, seed: u64) -> Result<(), EvalError> {
        let (ckpt_path, json_path) = self.paths(&outcome.key);
        std::fs::create_dir_all(ckpt_path.parent().expect("cells dir")).map_err(FormatError::Io)?;
        let ckpt = Checkpoint {
            model: outcome.model.clone(),
            optimizer: None,
            epoch: outcome.epochs,
            seed,
            record: Vec::new(),
        };
        save_checkpoint(&ckpt, &ckpt_path)?;
        let summary = CellSummary {
            spec: outcome.spec.clone(),
            key: outcome.key.clone(),
            epochs: outcome.epochs,
            stop: outcome.stop,
            train_seconds: outcome.train_seconds,
            final_train_error: outcome.final_train_error,
        };
        let json = serde_json::to_vec_pretty(&summary).map_err(|e| FormatError::Header(e.to_string()))?;
        format::atomic_write(&json_path, &json)?;
        Ok(())
    }
}

/// SHA-256 over the manifest, the designs and the split of a dataset.
pub fn dataset_fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&ds.manifest).expect("manifest serializes"));
    h.update(serde_json::to_vec(&ds.split).expect("split serializes"));
    for d in &ds.designs {
        for v in d.to_array() {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize()[..])
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn cell_key(config: &TrainConfig, fingerprint: &str) -> String {
    let mut h = Sha256::new();
    h.update(crate::dataset::generator_tag().as_bytes());
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(fingerprint.as_bytes());
    hex(&h.finalize()[..16])
}

fn train_cell(ds: &Dataset, spec: &CellSpec, common: &StudyCommon, fingerprint: &str) -> Result<CellOutcome, String> {
    let config = spec.train_config(common);
    let key = cell_key(&config, fingerprint);
    let cache = common.cache_dir.as_ref().map(CellCache::new);
    if let Some(hit) = cache.as_ref().and_then(|c| c.load(&key, &config)) {
        log::info!(
            "cell {key} ({} seed {}) loaded from cache",
            spec.architecture,
            spec.seed
        );
        return Ok(CellOutcome {
            spec: spec.clone(),
            ..hit
        });
    }
    let started = Instant::now();
    let out = train(ds, &config).map_err(|e| e.to_string())?;
    let outcome = CellOutcome {
        spec: spec.clone(),
        key,
        epochs: out.epochs(),
        stop: out.stop,
        train_seconds: started.elapsed().as_secs_f64(),
        final_train_error: out.final_rel_l2().unwrap_or(f64::NAN),
        model: out.model,
        cached: false,
    };
    log::info!(
        "cell {} ({} seed {} N {:?} q {}): {} epochs, train error {:.4}",
        outcome.key,
        spec.architecture,
        spec.seed,
        spec.n_train,
        spec.dropout,
        outcome.epochs,
        outcome.final_train_error
    );
    if let Some(cache) = &cache {
        cache.store(&outcome, spec.seed).map_err(|e| e.to_string())?;
    }
    Ok(outcome)
}

/// Trains (or loads) every cell. Cells are independent jobs; a failed cell
/// is reported in place and does not stop the others.
pub fn run_cells(ds: &Dataset, specs: &[CellSpec], common: &StudyCommon) -> Vec<Result<CellOutcome, String>> {
    let fingerprint = dataset_fingerprint(ds);
    specs
        .par_iter()
        .map(|spec| train_cell(ds, spec, common, &fingerprint))
        .collect()
}

/// One line of a study CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub study: String,
    pub model: Architecture,
    pub seed: u64,
    pub param: String,
    pub value: String,
    /// Mean relative ℓ₂ error (NaN for a failed cell).
    pub error: f64,
    /// Training wall-clock seconds of the cell (as first trained).
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: Architecture,
    pub param: String,
    pub value: String,
    pub mean_error: f64,
    /// Seeds that contributed to the mean.
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub model: Architecture,
    pub seed: u64,
    pub param: String,
    pub value: String,
    pub message: String,
}

/// Rows, per-setting means over seeds, and failed cells of one study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: String,
    pub rows: Vec<StudyRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

impl StudyReport {
    fn new(study: &str, rows: Vec<StudyRow>, failures: Vec<CellFailure>) -> Self {
        // Groups in first-appearance order of (model, value).
        let mut order: Vec<(Architecture, String, String)> = Vec::new();
        for r in &rows {
            let k = (r.model, r.param.clone(), r.value.clone());
            if !order.contains(&k) {
                order.push(k);
            }
        }
        let summary = order
            .into_iter()
            .map(|(model, param, value)| {
                let errs: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.model == model && r.value == value && r.error.is_finite())
                    .map(|r| r.error)
                    .collect();
                let mean_error = if errs.is_empty() {
                    f64::NAN
                } else {
                    errs.iter().sum::<f64>() / errs.len() as f64
                };
                SummaryRow {
                    model,
                    param,
                    value,
                    mean_error,
                    seeds: errs.len(),
                }
            })
            .collect();
        StudyReport {
            study: study.to_string(),
            rows,
            summary,
            failures,
        }
    }

    /// Seed-mean error of `model` at setting `value`.
    pub fn mean_error(&self, model: Architecture, value: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.model == model && s.value == value)
            .map(|s| s.mean_error)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_study_csv(&self.rows, out)
    }
}

pub fn write_study_csv<W: Write>(rows: &[StudyRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{STUDY_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:e},{:.3}",
            r.study, r.model, r.seed, r.param, r.value, r.error, r.seconds
        )?;
    }
    Ok(())
}

/// Trains the cells of one sweep and scores each on the dataset's test split.
fn sweep(
    study: &str,
    ds: &Dataset,
    common: &StudyCommon,
    param: &str,
    settings: &[(String, Option<usize>, f64)],
) -> Result<StudyReport, EvalError> {
    let mut specs = Vec::new();
    let mut labels = Vec::new();
    for &architecture in &common.architectures {
        for (value, n_train, dropout) in settings {
            for &seed in &common.seeds {
                specs.push(CellSpec {
                    architecture,
                    seed,
                    n_train: *n_train,
                    dropout: *dropout,
                });
                labels.push(value.clone());
            }
        }
    }
    let outcomes = run_cells(ds, &specs, common);
    let mut rows = Vec::with_capacity(specs.len());
    let mut failures = Vec::new();
    for ((spec, value), outcome) in specs.iter().zip(labels).zip(outcomes) {
        let scored = outcome.and_then(|cell| {
            mean_error(&cell.model, ds, &ds.split.test)
                .map(|e| (e, cell.train_seconds))
                .map_err(|e| e.to_string())
        });
        let (error, seconds) = match scored {
            Ok(v) => v,
            Err(message) => {
                log::warn!(
                    "{study} cell {} seed {} {param}={value} failed: {message}",
                    spec.architecture,
                    spec.seed
                );
                failures.push(CellFailure {
                    model: spec.architecture,
                    seed: spec.seed,
                    param: param.into(),
                    value: value.clone(),
                    message,
                });
                (f64::NAN, f64::NAN)
            }
        };
        rows.push(StudyRow {
            study: study.into(),
            model: spec.architecture,
            seed: spec.seed,
            param: param.into(),
            value,
            error,
            seconds,
        });
    }
    Ok(StudyReport::new(study, rows, failures))
}

fn check_dataset(ds: &Dataset) -> Result<(), EvalError> {
    if ds.split.train.is_empty() || ds.split.test.is_empty() {
        return Err(EvalError::Config(
            "dataset needs non-empty train and test splits".into(),
        ));
    }
    Ok(())
}

/// Held-out error as a function of the training-set size. Subsets are
/// nested, so every larger training set contains every smaller one.
pub fn convergence_study(ds: &Dataset, config: &ConvergenceConfig) -> Result<StudyReport, EvalError> {
    config.common.validate()?;
    check_dataset(ds)?;
    let mut n_list = config.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    if n_list.is_empty() {
        return Err(EvalError::Config("n_list is empty".into()));
    }
    let available = ds.split.train.len();
    if let Some(&bad) = n_list.iter().find(|&&n| n == 0 || n > available) {
        return Err(EvalError::Config(format!(
            "training-set size {bad} outside 1..={available}"
        )));
    }
    let dropout = config.common.train.model.dropout;
    let settings: Vec<_> = n_list.iter().map(|&n| (n.to_string(), Some(n), dropout)).collect();
    sweep("convergence", ds, &config.common, "N", &settings)
}

/// Held-out error (dropout off) of models trained with each dropout rate.
pub fn dropout_study(ds: &Dataset, config: &DropoutConfig) -> Result<StudyReport, EvalError> {
    config.common.validate()?;
    check_dataset(ds)?;
    let mut q_list = config.q_list.clone();
    if let Some(bad) = q_list.iter().find(|q| !(0.0..=0.5).contains(*q)) {
        return Err(EvalError::Config(format!("dropout rate {bad} outside [0, 0.5]")));
    }
    q_list.sort_by(f64::total_cmp);
    q_list.dedup_by(|a, b| a.to_bits() == b.to_bits());
    if q_list.is_empty() {
        return Err(EvalError::Config("q_list is empty".into()));
    }
    if let Some(n) = config.n_train {
        if n == 0 || n > ds.split.train.len() {
            return Err(EvalError::Config(format!(
                "training-set size {n} outside 1..={}",
                ds.split.train.len()
            )));
        }
    }
    let settings: Vec<_> = q_list.iter().map(|&q| (q.to_string(), config.n_train, q)).collect();
    sweep("dropout", ds, &config.common, "q", &settings)
}

fn ood_cache_path(cache_dir: &Path, config: &OodStudyConfig, bin: &OodBin) -> PathBuf {
    let mut h = Sha256::new();
    h.update(crate::dataset::generator_tag().as_bytes());
    h.update(serde_json::to_vec(&(bin, config.count_per_bin, config.ood_seed)).expect("serializes"));
    h.update(serde_json::to_vec(&ParameterRanges::default()).expect("serializes"));
    h.update(serde_json::to_vec(&SolverConfig::default()).expect("serializes"));
    cache_dir.join("ood").join(format!("{}.tdds", hex(&h.finalize()[..16])))
}

/// Solved OOD datasets of every bin, loaded from the cache when present.
fn ood_sets(config: &OodStudyConfig) -> Result<Vec<(OodBin, Dataset)>, EvalError> {
    let mut out = Vec::with_capacity(config.bins.len());
    for bin in &config.bins {
        let cached = config.common.cache_dir.as_ref().map(|d| ood_cache_path(d, config, bin));
        if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
            match load_dataset(path) {
                Ok(ds) => {
                    out.push((*bin, ds));
                    continue;
                }
                Err(e) => log::warn!("regenerating OOD bin {}: {e}", bin.label()),
            }
        }
        let set = ood_generate(
            std::slice::from_ref(bin),
            config.count_per_bin,
            config.ood_seed,
            &ParameterRanges::default(),
            &SolverConfig::default(),
        )?
        .pop()
        .expect("one bin requested");
        if let Some(path) = &cached {
            std::fs::create_dir_all(path.parent().expect("ood dir")).map_err(FormatError::Io)?;
            save_dataset(&set.dataset, path)?;
        }
        out.push((*bin, set.dataset));
    }
    Ok(out)
}

/// Error of models trained on the in-range data, on each OOD bin, plus the
/// regular held-out error (value `test`) for comparison.
pub fn ood_study(ds: &Dataset, config: &OodStudyConfig) -> Result<StudyReport, EvalError> {
    config.common.validate()?;
    check_dataset(ds)?;
    if config.bins.is_empty() || config.count_per_bin == 0 {
        return Err(EvalError::Config(
            "OOD study needs bins and a positive count per bin".into(),
        ));
    }
    for bin in &config.bins {
        bin.validate()?;
    }
    let sets = ood_sets(config)?;
    let dropout = config.common.train.model.dropout;
    let mut specs = Vec::new();
    for &architecture in &config.common.architectures {
        for &seed in &config.common.seeds {
            specs.push(CellSpec {
                architecture,
                seed,
                n_train: config.n_train,
                dropout,
            });
        }
    }
    let outcomes = run_cells(ds, &specs, &config.common);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (spec, outcome) in specs.iter().zip(outcomes) {
        let targets = std::iter::once(("test".to_string(), ds, ds.split.test.clone())).chain(
            sets.iter()
                .map(|(bin, set)| (bin.label(), set, (0..set.len()).collect::<Vec<_>>())),
        );
        for (value, data, indices) in targets {
            let scored = match &outcome {
                Ok(cell) => mean_error(&cell.model, data, &indices)
                    .map(|e| (e, cell.train_seconds))
                    .map_err(|e| e.to_string()),
                Err(message) => Err(message.clone()),
            };
            let (error, seconds) = scored.unwrap_or_else(|message| {
                failures.push(CellFailure {
                    model: spec.architecture,
                    seed: spec.seed,
                    param: "bin".into(),
                    value: value.clone(),
                    message,
                });
                (f64::NAN, f64::NAN)
            });
            rows.push(StudyRow {
                study: "ood".into(),
                model: spec.architecture,
                seed: spec.seed,
                param: "bin".into(),
                value,
                error,
                seconds,
            });
        }
    }
    Ok(StudyReport::new("ood", rows, failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = [StudyRow {
            study: "dropout".into(),
            model: Architecture::Deeponet,
            seed: 2,
            param: "q".into(),
            value: "0.2".into(),
            error: 0.25,
            seconds: 1.5,
        }];
        let mut out = Vec::new();
        write_study_csv(&rows, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "study,model,seed,param,value,error,seconds\ndropout,deeponet,2,q,0.2,2.5e-1,1.500\n"
        );
    }

    #[test]
    fn summary_means_over_seeds() {
        let row = |seed, value: &str, error| StudyRow {
            study: "convergence".into(),
            model: Architecture::Fno,
            seed,
            param: "N".into(),
            value: value.into(),
            error,
            seconds: 0.0,
        };
        let report = StudyReport::new(
            "convergence",
            vec![
                row(0, "100", 0.1),
                row(1, "100", 0.3),
                row(0, "500", 0.05),
                row(1, "500", f64::NAN),
            ],
            vec![],
        );
        assert!((report.mean_error(Architecture::Fno, "100").unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(report.mean_error(Architecture::Fno, "500").unwrap(), 0.05);
        assert_eq!(report.summary[1].seeds, 1);
        assert!(report.mean_error(Architecture::Deeponet, "100").is_none());
    }
}
