//! One function per subcommand. Each reads its JSON config, applies flag
//! overrides, records provenance in the output directory and calls into the
//! library.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tdcrop::dataset::{generate_dataset, load_dataset, save_dataset, Dataset, ParameterRanges};
use tdcrop::eval::{
    convergence_study, dropout_study, evaluate_model, ood_study, timing_bench, train_epoch_bench, BenchConfig,
    ConvergenceConfig, DropoutConfig, OodStudyConfig, StudyCommon, StudyReport, TimingRow, TIMING_CSV_HEADER,
};
use tdcrop::neuralops::{Architecture, Model, ModelConfig};
use tdcrop::rodmodel::{solve_equilibrium, DesignVector, SolverConfig, SolverError};
use tdcrop::training::{load_checkpoint, load_checkpoint_for, resume, train, TrainConfig};

use crate::config::{load_config, pick_dir, read_config, usage, write_json, write_provenance};

/// Flags shared by every subcommand.
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Common {
    fn out_dir(&self, from_config: Option<&Path>) -> Result<PathBuf> {
        let dir = pick_dir(self.out.as_deref(), from_config, ".");
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

fn open_dataset(path: Option<&Path>) -> Result<Dataset> {
    let path = path.ok_or_else(|| usage("the config must name a `dataset` file"))?;
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

// ---------------------------------------------------------------- simulate

/// Design given inline on the command line; every field is required when no
/// design file is used.
#[derive(Default)]
pub struct InlineDesign {
    pub offsets: Option<Vec<f64>>,
    pub pitches: Option<Vec<f64>>,
    pub tensions: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub length: Option<f64>,
    pub youngs: Option<f64>,
}

impl InlineDesign {
    fn build(&self) -> Result<DesignVector> {
        let four = |name: &str, v: &Option<Vec<f64>>| -> Result<[f64; 4]> {
            let v = v
                .as_ref()
                .ok_or_else(|| usage(format!("missing --{name} (or pass --design <file>)")))?;
            v.as_slice()
                .try_into()
                .map_err(|_| usage(format!("--{name} takes 4 comma-separated values, got {}", v.len())))
        };
        let one =
            |name: &str, v: Option<f64>| v.ok_or_else(|| usage(format!("missing --{name} (or pass --design <file>)")));
        Ok(DesignVector {
            tendon_offsets: four("offsets", &self.offsets)?,
            tendon_pitches: four("pitches", &self.pitches)?,
            tendon_tensions: four("tensions", &self.tensions)?,
            backbone_radius: one("radius", self.radius)?,
            length: one("length", self.length)?,
            youngs_modulus: one("youngs", self.youngs)?,
        })
    }
}

pub fn simulate(
    common: &Common,
    design_file: Option<&Path>,
    inline: &InlineDesign,
    steps: Option<usize>,
) -> Result<()> {
    let design: DesignVector = match design_file {
        Some(p) => read_config(p)?,
        None => inline.build()?,
    };
    let mut solver: SolverConfig = load_config(common.config.as_deref())?;
    if let Some(steps) = steps {
        if steps == 0 {
            return Err(usage("--steps must be at least 1"));
        }
        solver = solver.single_step(steps);
    }
    let out = common.out_dir(None)?;
    write_provenance(&out, "simulate", &json!({ "design": design, "solver": solver }), &[])?;
    let eq = match solve_equilibrium(&design, &solver) {
        Ok(eq) => eq,
        Err(e) => {
            write_json(
                &out.join("equilibrium.json"),
                &json!({ "converged": false, "error": e.to_string(), "design": design }),
            )?;
            return Err(match e {
                SolverError::InputDomain(msg) => usage(format!("invalid design: {msg}")),
                other => anyhow::Error::new(other).context("equilibrium solve failed"),
            });
        }
    };

    let mut csv = BufWriter::new(File::create(out.join("equilibrium.csv"))?);
    let mut header = vec!["s".to_string(), "rx".into(), "ry".into(), "rz".into()];
    header.extend((1..=3).flat_map(|i| (1..=3).map(move |j| format!("R{i}{j}"))));
    header.extend((1..=4).flat_map(|t| ["x", "y", "z"].map(|c| format!("t{t}{c}"))));
    writeln!(csv, "{}", header.join(","))?;
    for k in 0..eq.arclengths.len() {
        let mut row = vec![eq.arclengths[k]];
        row.extend(eq.backbone[k].iter());
        let r = &eq.frames[k];
        row.extend((0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])));
        for curve in &eq.tendon_curves {
            row.extend(curve[k].iter());
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(csv, "{}", cells.join(","))?;
    }
    csv.flush()?;
    write_json(
        &out.join("equilibrium.json"),
        &json!({
            "converged": true,
            "residual_norm": eq.stats.residual_norm,
            "iterations": eq.stats.iterations,
            "homotopy_used": eq.stats.homotopy_used,
            "nodes": eq.arclengths.len(),
            "design": design,
        }),
    )?;
    log::info!(
        "solved in {} iterations, residual {:.2e}",
        eq.stats.iterations,
        eq.stats.residual_norm
    );
    Ok(())
}

// ---------------------------------------------------------------- gen-data

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num_samples: usize,
    pub seed: u64,
    pub ranges: ParameterRanges,
    pub solver: SolverConfig,
    /// Output directory (overridden by `--out`).
    pub output_dir: Option<PathBuf>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_samples: 1_000,
            seed: 0,
            ranges: ParameterRanges::default(),
            solver: SolverConfig::default(),
            output_dir: None,
        }
    }
}

pub fn gen_data(common: &Common) -> Result<()> {
    let mut config: GenConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common.out_dir(config.output_dir.as_deref())?;
    config.output_dir = Some(out.clone());
    write_provenance(&out, "gen-data", &config, &[config.seed])?;
    let ds = generate_dataset(config.num_samples, config.seed, &config.ranges, &config.solver)?;
    let path = out.join("dataset.tdds");
    save_dataset(&ds, &path)?;
    log::info!(
        "wrote {} designs ({} train / {} test, {} redrawn) to {}",
        ds.len(),
        ds.split.train.len(),
        ds.split.test.len(),
        ds.manifest.failures,
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- train

pub fn train_cmd(common: &Common, resume_from: Option<&Path>) -> Result<()> {
    let mut config: TrainConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common.out_dir(config.output_dir.as_deref())?;
    config.output_dir = Some(out.clone());
    config.validate()?;
    write_provenance(&out, "train", &config, &[config.seed])?;
    let ds = open_dataset(config.dataset.as_deref())?;
    let outcome = match resume_from {
        None => train(&ds, &config)?,
        Some(path) => {
            let ckpt = load_checkpoint_for(path, &config.model)
                .map_err(|e| usage(format!("cannot resume from {}: {e}", path.display())))?;
            resume(&ds, &config, ckpt)?
        }
    };
    write_json(
        &out.join("train_summary.json"),
        &json!({
            "model": config.model.architecture,
            "parameters": outcome.model.num_params(),
            "epochs": outcome.epochs(),
            "stop": outcome.stop,
            "final_rel_l2": outcome.final_rel_l2(),
            "final_checkpoint": outcome.final_checkpoint,
        }),
    )?;
    log::info!(
        "{} trained for {} epochs ({:?}), training error {:.4}",
        config.model.architecture,
        outcome.epochs(),
        outcome.stop,
        outcome.final_rel_l2().unwrap_or(f64::NAN)
    );
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    Train,
    All,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub dataset: Option<PathBuf>,
    /// Expected architecture; checkpoints of another kind are rejected.
    pub model: Option<Architecture>,
    /// One checkpoint per training seed.
    pub checkpoints: Vec<PathBuf>,
    pub split: EvalSplit,
    pub output_dir: Option<PathBuf>,
}

pub fn eval_cmd(common: &Common) -> Result<()> {
    let mut config: EvalConfig = load_config(common.config.as_deref())?;
    if config.checkpoints.is_empty() {
        return Err(usage("the config must list at least one checkpoint"));
    }
    let out = common.out_dir(config.output_dir.as_deref())?;
    config.output_dir = Some(out.clone());
    let mut models: Vec<(u64, Model)> = Vec::with_capacity(config.checkpoints.len());
    for path in &config.checkpoints {
        let ckpt = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        let expected = config.model.unwrap_or_else(|| ckpt.model.architecture());
        if ckpt.model.architecture() != expected {
            return Err(usage(format!(
                "checkpoint {} holds a {} model, expected {expected}",
                path.display(),
                ckpt.model.architecture()
            )));
        }
        config.model = Some(expected);
        models.push((ckpt.seed, ckpt.model));
    }
    let seeds: Vec<u64> = models.iter().map(|m| m.0).collect();
    write_provenance(&out, "eval", &config, &seeds)?;
    let ds = open_dataset(config.dataset.as_deref())?;
    let indices = match config.split {
        EvalSplit::Test => ds.split.test.clone(),
        EvalSplit::Train => ds.split.train.clone(),
        EvalSplit::All => (0..ds.len()).collect(),
    };
    let architecture = config.model.expect("set from the first checkpoint");
    let report = evaluate_model(architecture, &models, &ds, &indices)?;
    write_json(&out.join("eval_report.json"), &report)?;
    log::info!(
        "{architecture}: mean relative error {:.4} (accuracy {:.2}%) over {} seeds",
        report.mean_error,
        report.accuracy,
        report.seed_count
    );
    Ok(())
}

// ---------------------------------------------------------------- study

pub enum StudyKind {
    Convergence,
    Dropout,
    Ood,
}

/// Cache directory: the config value, else `TDCROP_CACHE`, else `<out>/cache`.
fn resolve_cache(common: &mut StudyCommon, out: &Path) {
    if common.cache_dir.is_none() {
        common.cache_dir = Some(
            std::env::var_os("TDCROP_CACHE")
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| out.join("cache")),
        );
    }
}

fn prepare_common(study: &mut StudyCommon, common: &Common) -> Result<(PathBuf, Dataset)> {
    if let Some(seed) = common.seed {
        study.seeds = vec![seed];
    }
    let out = common.out_dir(None)?;
    resolve_cache(study, &out);
    let ds = open_dataset(study.dataset.as_deref())?;
    Ok((out, ds))
}

fn write_report(out: &Path, report: &StudyReport) -> Result<()> {
    let mut csv = BufWriter::new(File::create(out.join(format!("{}.csv", report.study)))?);
    report.write_csv(&mut csv)?;
    csv.flush()?;
    write_json(&out.join(format!("{}_summary.json", report.study)), report)?;
    for s in &report.summary {
        log::info!(
            "{} {}={}: mean error {:.4} ({} seeds)",
            s.model,
            s.param,
            s.value,
            s.mean_error,
            s.seeds
        );
    }
    for f in &report.failures {
        log::warn!(
            "failed cell {} seed {} {}={}: {}",
            f.model,
            f.seed,
            f.param,
            f.value,
            f.message
        );
    }
    Ok(())
}

pub fn study_cmd(common: &Common, kind: StudyKind) -> Result<()> {
    let report = match kind {
        StudyKind::Convergence => {
            let mut config: ConvergenceConfig = load_config(common.config.as_deref())?;
            let (out, ds) = prepare_common(&mut config.common, common)?;
            write_provenance(&out, "study convergence", &config, &config.common.seeds)?;
            (out, convergence_study(&ds, &config)?)
        }
        StudyKind::Dropout => {
            let mut config: DropoutConfig = load_config(common.config.as_deref())?;
            let (out, ds) = prepare_common(&mut config.common, common)?;
            write_provenance(&out, "study dropout", &config, &config.common.seeds)?;
            (out, dropout_study(&ds, &config)?)
        }
        StudyKind::Ood => {
            let mut config: OodStudyConfig = load_config(common.config.as_deref())?;
            let (out, ds) = prepare_common(&mut config.common, common)?;
            write_provenance(&out, "study ood", &config, &config.common.seeds)?;
            (out, ood_study(&ds, &config)?)
        }
    };
    write_report(&report.0, &report.1)
}

// ---------------------------------------------------------------- bench

pub fn bench_cmd(common: &Common) -> Result<()> {
    let mut config: BenchConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    let out = common.out_dir(None)?;
    write_provenance(&out, "bench", &config, &[config.seed])?;
    let mut rows: Vec<TimingRow> = Vec::new();
    for &arch in &config.architectures {
        let model = Model::new(&ModelConfig::new(arch), config.seed)?;
        rows.extend(timing_bench(
            &model,
            &config.workloads,
            config.repeats,
            config.warmups,
            config.seed,
        )?);
        for &n in &config.train_sizes {
            rows.push(train_epoch_bench(
                &ModelConfig::new(arch),
                n,
                config.batch_size,
                config.repeats,
                config.warmups,
                config.seed,
            )?);
        }
    }
    let mut csv = BufWriter::new(File::create(out.join("timing.csv"))?);
    writeln!(csv, "{TIMING_CSV_HEADER}")?;
    for r in &rows {
        writeln!(csv, "{}", r.csv_line())?;
        log::info!("{} {} {}: {:.4} s", r.model, r.kind, r.workload, r.seconds);
    }
    csv.flush()?;
    write_json(&out.join("timing.json"), &rows)
}
