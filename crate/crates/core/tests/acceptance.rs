//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
//!
//! Trained study cells, the master dataset and the OOD sets are cached under
//! `$TDCROP_CACHE` (default: `target/tmp/acceptance`), so a second run only
//! repeats the cheap checks and the timings. Clear the cache after changing
//! training code.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use tdcrop::dataset::{
    generate_dataset, load_dataset, sample_design, save_dataset, Dataset, DatasetError, ParameterRanges,
};
use tdcrop::eval::{
    convergence_study, dropout_study, ood_study, random_inference_batches, timing_bench, ConvergenceConfig,
    DropoutConfig, OodStudyConfig, StudyCommon, StudyReport, DEFAULT_OOD_BINS,
};
use tdcrop::format::FormatError;
use tdcrop::neuralops::{fourier_layer, Architecture, Model, ModelConfig};
use tdcrop::rng::{stream, Domain};
use tdcrop::rodmodel::{solve_equilibrium, DesignVector, SolverConfig};
use tdcrop::training::{decode_checkpoint, encode_checkpoint, train, Checkpoint, TrainConfig, TrainError};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn cache_dir() -> PathBuf {
    std::env::var_os("TDCROP_CACHE")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

// ------------------------------------------------------------------ 1

fn planar(tensions: [f64; 4]) -> DesignVector {
    DesignVector {
        tendon_offsets: [0.01; 4],
        tendon_pitches: [0.0; 4],
        tendon_tensions: tensions,
        backbone_radius: 0.001,
        length: 0.2,
        youngs_modulus: 30e9,
    }
}

fn helical() -> DesignVector {
    DesignVector {
        tendon_offsets: [0.008, 0.006, 0.0095, 0.007],
        tendon_pitches: [10.0, -5.0, 0.0, 17.5],
        tendon_tensions: [2.0, 0.5, 0.0, 3.0],
        backbone_radius: 0.0008,
        length: 0.25,
        youngs_modulus: 40e9,
    }
}

fn solver_suite() -> Verdict {
    let started = Instant::now();
    let solver = SolverConfig::default();
    let ranges = ParameterRanges::default();
    let mut rng = stream(1, Domain::Subset, 1);

    let mut straight = 0.0f64;
    for _ in 0..10 {
        let mut d = sample_design(&mut rng, &ranges);
        d.tendon_tensions = [0.0; 4];
        let eq = solve_equilibrium(&d, &solver).unwrap();
        for k in 0..eq.num_nodes() {
            straight = straight
                .max((eq.backbone[k] - Vector3::new(0.0, 0.0, eq.arclengths[k])).norm())
                .max((eq.frames[k] - Matrix3::identity()).norm());
        }
    }

    let base = solve_equilibrium(&helical(), &solver).unwrap();
    let mut equivariance = 0.0f64;
    for delta in [0.3, -1.2, 2.5] {
        let turned = solve_equilibrium(
            &helical(),
            &SolverConfig {
                routing_phase: delta,
                ..solver.clone()
            },
        )
        .unwrap();
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), delta).into_inner();
        for k in 0..base.num_nodes() {
            equivariance = equivariance
                .max((turned.backbone[k] - rz * base.backbone[k]).norm())
                .max((turned.frames[k] - rz * base.frames[k] * rz.transpose()).norm());
        }
    }

    let single = solve_equilibrium(&planar([5.0, 0.0, 0.0, 0.0]), &solver).unwrap();
    let planarity = single.backbone.iter().map(|p| p.y.abs()).fold(0.0, f64::max) / 0.2;
    let symmetry = [[3.0, 0.0, 3.0, 0.0], [0.0, 4.5, 0.0, 4.5]]
        .iter()
        .map(|t| {
            let tip = solve_equilibrium(&planar(*t), &solver).unwrap().tip();
            tip.x.hypot(tip.y) / 0.2
        })
        .fold(0.0, f64::max);

    let tips: Vec<Vector3<f64>> = [82, 164, 328]
        .iter()
        .map(|&steps| solve_equilibrium(&helical(), &solver.single_step(steps)).unwrap().tip())
        .collect();
    let order = ((tips[0] - tips[1]).norm() / (tips[1] - tips[2]).norm()).log2();

    let mut rng = stream(2, Domain::Subset, 2);
    let designs: Vec<_> = (0..100).map(|_| sample_design(&mut rng, &ranges)).collect();
    let solves: Vec<_> = designs.par_iter().map(|d| solve_equilibrium(d, &solver)).collect();
    let converged = solves.iter().filter(|s| s.is_ok()).count();
    let worst_residual = solves
        .iter()
        .flatten()
        .map(|eq| eq.stats.residual_norm)
        .fold(0.0, f64::max);
    let fallbacks = solves.iter().flatten().filter(|eq| eq.stats.homotopy_used).count();
    let seconds = started.elapsed().as_secs_f64();

    let pass = straight < 1e-12
        && equivariance < 1e-8
        && planarity < 1e-8
        && symmetry < 1e-8
        && (3.5..=4.5).contains(&order)
        && converged == 100
        && worst_residual < 1e-8
        && fallbacks <= 1
        && seconds < 120.0;
    verdict(
        pass,
        format!(
            "straightness {straight:.1e}, equivariance {equivariance:.1e}, planarity {planarity:.1e}·L, \
             symmetry {symmetry:.1e}·L, RK4 order {order:.2}, {converged}/100 converged, worst residual \
             {worst_residual:.1e}, {fallbacks} homotopy fallbacks, {seconds:.1} s"
        ),
    )
}

// ------------------------------------------------------------------ 2

fn parameter_counts() -> Verdict {
    let expected = [
        (Architecture::Deeponet, 219_904),
        (Architecture::DeeponetPose, 205_668),
        (Architecture::Fno, 168_844),
        (Architecture::FnoPose, 168_457),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (arch, want) in expected {
        let got = Model::new(&ModelConfig::new(arch), 0).unwrap().num_params();
        pass &= got == want;
        parts.push(format!("{arch} {got} (expected {want})"));
    }
    verdict(pass, parts.join(", "))
}

// ------------------------------------------------------------------ 3

fn gradient_check() -> Verdict {
    let started = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for arch in Architecture::ALL {
        let model = Model::new(&ModelConfig::reduced(arch), 17).unwrap();
        let batch = common::synthetic_batch(4, 3, 8);
        let report = common::finite_difference_sweep(&model, &batch);
        pass &= report.failures.is_empty() && report.checked == model.num_params();
        parts.push(format!(
            "{arch} {}/{} ok (worst rel among |err| > 1e-8: {:.1e})",
            report.checked - report.failures.len(),
            report.checked,
            report.worst_relative
        ));
    }
    let seconds = started.elapsed().as_secs_f64();
    pass &= seconds < 60.0;
    verdict(pass, format!("{}, {seconds:.1} s", parts.join(", ")))
}

// ------------------------------------------------------------------ 4

fn fourier_oracle() -> Verdict {
    let mut rng = stream(21, Domain::Init, 7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (x, w) = common::random_fourier_instance(&mut rng);
        let want = common::dft_fourier_layer(&x, &w);
        let got = fourier_layer(&x, &w).unwrap();
        for (a, b) in got.values.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        worst < 1e-10,
        format!("max deviation {worst:.2e} over 100 random layers"),
    )
}

// ------------------------------------------------------------------ 5

fn overfit() -> Verdict {
    let ds = generate_dataset(10, 7, &ParameterRanges::default(), &SolverConfig::default()).unwrap();
    let mut pass = ds.split.train.len() == 8;
    let mut parts = Vec::new();
    for (arch, budget) in [(Architecture::Deeponet, 5_000), (Architecture::Fno, 1_500)] {
        let config = TrainConfig {
            max_epochs: budget,
            min_epochs: budget,
            checkpoint_every: 0,
            ..TrainConfig::for_architecture(arch)
        };
        let started = Instant::now();
        let out = train(&ds, &config).unwrap();
        let best = out.record.iter().map(|r| r.rel_l2).fold(f64::INFINITY, f64::min);
        let reached = out.record.iter().position(|r| r.rel_l2 < 0.01);
        pass &= reached.is_some();
        parts.push(format!(
            "{arch}: best {best:.4} ({}), final {:.4}, {:.0} s",
            reached.map_or("never below 1%".to_string(), |e| format!("below 1% at epoch {e}")),
            out.final_rel_l2().unwrap(),
            started.elapsed().as_secs_f64()
        ));
    }
    verdict(pass, parts.join("; "))
}

// ------------------------------------------------------------------ 6-8

fn master_dataset(cache: &Path) -> Dataset {
    let path = cache.join("master_2500_seed7.tdds");
    if let Ok(ds) = load_dataset(&path) {
        return ds;
    }
    let ds = generate_dataset(2_500, 7, &ParameterRanges::default(), &SolverConfig::default()).unwrap();
    std::fs::create_dir_all(cache).unwrap();
    save_dataset(&ds, &path).unwrap();
    ds
}

fn study_common(cache: &Path) -> StudyCommon {
    StudyCommon {
        cache_dir: Some(cache.to_path_buf()),
        ..Default::default()
    }
}

fn means(report: &StudyReport, arch: Architecture, values: &[&str]) -> Vec<f64> {
    values
        .iter()
        .map(|v| report.mean_error(arch, v).unwrap_or(f64::NAN))
        .collect()
}

/// Non-increasing, allowing one rise of less than 10% relative.
fn trend_ok(errors: &[f64]) -> bool {
    if errors.iter().any(|e| !e.is_finite()) {
        return false;
    }
    let rises: Vec<f64> = errors
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[1] - w[0]) / w[0])
        .collect();
    rises.is_empty() || (rises.len() == 1 && rises[0] < 0.10)
}

fn convergence(ds: &Dataset, cache: &Path) -> Verdict {
    let started = Instant::now();
    let config = ConvergenceConfig {
        common: study_common(cache),
        n_list: vec![100, 500, 2_000],
    };
    let report = convergence_study(ds, &config).unwrap();
    let values = ["100", "500", "2000"];
    let mut pass = report.failures.is_empty();
    let mut parts = Vec::new();
    for arch in Architecture::ALL {
        let e = means(&report, arch, &values);
        let ok = trend_ok(&e);
        pass &= ok;
        parts.push(format!(
            "{arch} {:.3}/{:.3}/{:.3}{}",
            e[0],
            e[1],
            e[2],
            if ok { "" } else { " (trend broken)" }
        ));
    }
    let deeponet_2000 = report.mean_error(Architecture::Deeponet, "2000").unwrap_or(f64::NAN);
    pass &= deeponet_2000 <= 0.30;
    verdict(
        pass,
        format!(
            "N=100/500/2000 3-seed means: {}; DeepONet at N=2000 {deeponet_2000:.3} (limit 0.30); {} failed cells; {:.0} s",
            parts.join(", "),
            report.failures.len(),
            started.elapsed().as_secs_f64()
        ),
    )
}

fn dropout(ds: &Dataset, cache: &Path) -> Verdict {
    let config = DropoutConfig {
        common: StudyCommon {
            architectures: vec![Architecture::Deeponet],
            ..study_common(cache)
        },
        q_list: vec![0.0, 0.2],
        n_train: Some(2_000),
    };
    let report = dropout_study(ds, &config).unwrap();
    let e = means(&report, Architecture::Deeponet, &["0", "0.2"]);
    verdict(
        report.failures.is_empty() && e[1] > e[0],
        format!("DeepONet N=2000: q=0 {:.4}, q=0.2 {:.4}", e[0], e[1]),
    )
}

fn ood(ds: &Dataset, cache: &Path) -> Verdict {
    let started = Instant::now();
    let config = OodStudyConfig {
        common: study_common(cache),
        n_train: Some(2_000),
        bins: DEFAULT_OOD_BINS.to_vec(),
        count_per_bin: 1_000,
        ood_seed: 0,
    };
    let report = ood_study(ds, &config).unwrap();
    let mut pass = report.failures.is_empty();
    let mut parts = Vec::new();
    for arch in Architecture::ALL {
        let e = means(&report, arch, &["test", "-5..0", "0..5", "5..10", "10..15", "15..20"]);
        pass &= e[5] > e[1];
        parts.push(format!(
            "{arch} test {:.3} | -5..0 {:.3} | 0..5 {:.3} | 5..10 {:.3} | 10..15 {:.3} | 15..20 {:.3}{}",
            e[0],
            e[1],
            e[2],
            e[3],
            e[4],
            e[5],
            if e[2] < e[1] { " (0..5 dip)" } else { "" }
        ));
    }
    verdict(
        pass,
        format!("{}; {:.0} s", parts.join("; "), started.elapsed().as_secs_f64()),
    )
}

// ------------------------------------------------------------------ 9

/// Median of five timed 80k-design runs after one warmup, stopping as soon
/// as three runs fall on the same side of `limit` (the median is then
/// decided). Returns the decision and the runs taken.
fn large_workload(model: &Model, limit: f64) -> (bool, Vec<f64>) {
    let batches = random_inference_batches(80_000, 0);
    let run = || {
        let t = Instant::now();
        let sums: Vec<f64> = batches
            .par_iter()
            .map(|b| model.predict_tendons(b).unwrap().iter().sum::<f64>())
            .collect();
        std::hint::black_box(sums);
        t.elapsed().as_secs_f64()
    };
    run();
    let mut times = Vec::new();
    while times.len() < 5 {
        times.push(run());
        let below = times.iter().filter(|&&t| t < limit).count();
        if below >= 3 || times.len() - below >= 3 {
            return (below >= 3, times);
        }
    }
    unreachable!("five runs always decide the median")
}

fn throughput() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for arch in Architecture::ALL {
        let model = Model::new(&ModelConfig::new(arch), 0).unwrap();
        let rows = timing_bench(&model, &[1, 1_000], 5, 2, 0).unwrap();
        let (one, thousand) = (rows[0].seconds, rows[1].seconds);
        let (large_ok, large) = large_workload(&model, 10.0);
        let latency_ok = arch != Architecture::Deeponet || one < 0.010;
        pass &= thousand < 1.0 && large_ok && latency_ok;
        parts.push(format!(
            "{arch}: 1 design {:.2} ms, 1k {:.3} s, 80k runs [{}] s",
            one * 1e3,
            thousand,
            large.iter().map(|t| format!("{t:.1}")).collect::<Vec<_>>().join(", ")
        ));
    }
    verdict(
        pass,
        format!("{} on {}", parts.join("; "), tdcrop::eval::hardware_descriptor()),
    )
}

// ------------------------------------------------------------------ 10

fn flip_payload_byte(bytes: &[u8], rng: &mut impl Rng) -> Vec<u8> {
    let mut bad = bytes.to_vec();
    let at = rng.gen_range(bytes.len() / 2..bytes.len() - 4);
    bad[at] ^= 1 << rng.gen_range(0..8);
    bad
}

fn round_trips() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(12, 3, &ParameterRanges::default(), &SolverConfig::default()).unwrap();
    let path = dir.path().join("d.tdds");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let dataset_ok = back == ds && bits(&back.targets) == bits(&ds.targets) && {
        let again = dir.path().join("e.tdds");
        save_dataset(&back, &again).unwrap();
        std::fs::read(&again).unwrap() == std::fs::read(&path).unwrap()
    };

    let config = TrainConfig {
        model: ModelConfig::reduced(Architecture::FnoPose),
        max_epochs: 3,
        batch_size: 4,
        checkpoint_every: 0,
        ..Default::default()
    };
    let out = train(&ds, &config).unwrap();
    let ckpt = Checkpoint {
        model: out.model,
        optimizer: Some(out.optimizer),
        epoch: out.record.len(),
        seed: config.seed,
        record: out.record,
    };
    let bytes = encode_checkpoint(&ckpt).unwrap();
    let decoded = decode_checkpoint(&bytes).unwrap();
    let opt = |c: &Checkpoint| {
        let o = c.optimizer.as_ref().unwrap();
        (bits(&o.m), bits(&o.v), o.t)
    };
    let checkpoint_ok = decoded == ckpt
        && bits(&decoded.model.params) == bits(&ckpt.model.params)
        && opt(&decoded) == opt(&ckpt)
        && encode_checkpoint(&decoded).unwrap() == bytes;

    let mut rng = stream(5, Domain::Subset, 5);
    let dataset_bytes = std::fs::read(&path).unwrap();
    let mut detected = 0;
    for _ in 0..20 {
        let bad_path = dir.path().join("bad.tdds");
        std::fs::write(&bad_path, flip_payload_byte(&dataset_bytes, &mut rng)).unwrap();
        if matches!(
            load_dataset(&bad_path),
            Err(DatasetError::Format(FormatError::Checksum { .. }))
        ) {
            detected += 1;
        }
        if matches!(
            decode_checkpoint(&flip_payload_byte(&bytes, &mut rng)),
            Err(TrainError::Format(FormatError::Checksum { .. }))
        ) {
            detected += 1;
        }
    }
    verdict(
        dataset_ok && checkpoint_ok && detected == 40,
        format!(
            "dataset round trip {}, checkpoint round trip {} (Adam step {}), {detected}/40 corruptions detected",
            if dataset_ok { "bitwise" } else { "MISMATCH" },
            if checkpoint_ok { "bitwise" } else { "MISMATCH" },
            opt(&ckpt).2
        ),
    )
}

fn main() {
    let cache = cache_dir();
    println!("acceptance cache: {}", cache.display());
    let cheap: [(u32, &str, fn() -> Verdict); 5] = [
        (1, "solver correctness", solver_suite),
        (2, "parameter counts", parameter_counts),
        (3, "gradient verification", gradient_check),
        (4, "Fourier-layer oracle", fourier_oracle),
        (5, "overfit sanity", overfit),
    ];
    let mut results = Vec::new();
    let mut report = |id: u32, name: &str, v: Verdict| {
        println!(
            "criterion {id:>2} {}: {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push(v.pass);
    };
    for (id, name, check) in cheap {
        report(id, name, check());
    }
    let ds = master_dataset(&cache);
    report(6, "convergence trend", convergence(&ds, &cache));
    report(7, "dropout trend", dropout(&ds, &cache));
    report(8, "OOD ordering", ood(&ds, &cache));
    report(9, "inference throughput", throughput());
    report(10, "format round trips", round_trips());
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
