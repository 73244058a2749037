use proptest::prelude::*;
use rand::Rng;
use tdcrop::dataset::{generate_dataset, Dataset, ParameterRanges};
use tdcrop::format::FormatError;
use tdcrop::neuralops::{Architecture, Batch, Model, ModelConfig};
use tdcrop::rng::{stream, Domain};
use tdcrop::rodmodel::SolverConfig;
use tdcrop::training::{
    adam_step, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, resume, save_checkpoint,
    train, AdamConfig, AdamState, Checkpoint, LrSchedule, TrainConfig, TrainError,
};

fn small_dataset(n: usize, seed: u64) -> Dataset {
    generate_dataset(n, seed, &ParameterRanges::default(), &SolverConfig::default()).unwrap()
}

fn quick_config(arch: Architecture, epochs: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig::reduced(arch),
        seed: 5,
        batch_size: 4,
        max_epochs: epochs,
        checkpoint_every: 0,
        grad_chunk: 2,
        ..Default::default()
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Plain Adam written out per coordinate, for one parameter.
fn adam_reference(grads: &[f64], lr: f64, theta0: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut theta) = (0.0, 0.0, theta0);
    for (k, g) in grads.iter().enumerate() {
        let t = (k + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    theta
}

#[test]
fn adam_matches_the_scalar_recursion() {
    let mut rng = stream(3, Domain::Init, 0);
    let grads: Vec<Vec<f64>> = (0..25)
        .map(|_| (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let theta0: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
    let mut params = theta0.clone();
    let mut state = AdamState::new(6, AdamConfig::default());
    for g in &grads {
        adam_step(&mut params, g, &mut state, 1e-3, None).unwrap();
    }
    assert_eq!(state.t, 25);
    for i in 0..6 {
        let series: Vec<f64> = grads.iter().map(|g| g[i]).collect();
        let expected = adam_reference(&series, 1e-3, theta0[i]);
        assert!((params[i] - expected).abs() < 1e-14, "coordinate {i}");
    }
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    // With m̂ = g and v̂ = g², the first update is lr·g/(|g| + ε).
    let mut params = vec![1.0, -1.0, 0.5];
    let mut state = AdamState::new(3, AdamConfig::default());
    adam_step(&mut params, &[4.0, -0.25, 0.0], &mut state, 0.01, None).unwrap();
    assert!((params[0] - (1.0 - 0.01 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
    assert!((params[1] - (-1.0 + 0.01 * 0.25 / (0.25 + 1e-8))).abs() < 1e-15);
    assert_eq!(params[2], 0.5);
}

#[test]
fn adam_is_nearly_invariant_to_gradient_scale() {
    let mut rng = stream(4, Domain::Init, 1);
    // ε contributes lr·ε/|g| per step, so |g| ≥ 2 keeps 100 steps below 1e-9.
    let g: Vec<f64> = (0..32)
        .map(|_| rng.gen_range(2.0..5.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let cg: Vec<f64> = g.iter().map(|x| 10.0 * x).collect();
    let mut a = vec![0.0; 32];
    let mut b = vec![0.0; 32];
    let mut sa = AdamState::new(32, AdamConfig::default());
    let mut sb = AdamState::new(32, AdamConfig::default());
    for _ in 0..100 {
        adam_step(&mut a, &g, &mut sa, 1e-3, None).unwrap();
        adam_step(&mut b, &cg, &mut sb, 1e-3, None).unwrap();
    }
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "trajectories differ by {worst}");
}

#[test]
fn adam_rejects_non_finite_updates_without_touching_state() {
    let mut params = vec![1.0, 2.0];
    let mut state = AdamState::new(2, AdamConfig::default());
    let err = adam_step(&mut params, &[f64::NAN, 1.0], &mut state, 1e-3, None).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { .. }), "{err}");
    assert_eq!(params, vec![1.0, 2.0]);
    assert_eq!(state.t, 0);
    assert!(state.m.iter().chain(&state.v).all(|&x| x == 0.0));
}

#[test]
fn schedule_anchor_values() {
    let s = LrSchedule::default();
    assert_eq!(s.lr_at(0).unwrap(), 1e-4);
    assert!((s.lr_at(7_500).unwrap() - 3e-3).abs() < 1e-15);
    assert!((s.lr_at(25_000 + 7_500).unwrap() - 2.1e-3).abs() < 1e-15);
    assert!((s.lr_at(99_999).unwrap() - 5e-6).abs() < 1e-8);
}

proptest! {
    #[test]
    fn schedule_stays_between_end_and_peak(epoch in 0usize..100_000) {
        let s = LrSchedule::default();
        let lr = s.lr_at(epoch).unwrap();
        prop_assert!(lr >= s.end * (1.0 - 1e-12) && lr <= s.peak * (1.0 + 1e-12));
    }

    #[test]
    fn schedule_is_continuous_within_a_cycle(epoch in 1usize..100_000) {
        prop_assume!(epoch % 25_000 != 0);
        let s = LrSchedule::default();
        let jump = (s.lr_at(epoch).unwrap() - s.lr_at(epoch - 1).unwrap()).abs();
        // Steepest slope: warmup from `end` to the first peak over 7,500 epochs.
        prop_assert!(jump <= 3e-3 / 7_500.0 * 1.001);
    }
}

#[test]
fn loss_decreases_on_a_frozen_batch_for_every_architecture() {
    let ds = small_dataset(6, 11);
    let batch = Batch::gather(&ds, &[0, 1, 2, 3]);
    for arch in Architecture::ALL {
        let mut model = Model::new(&ModelConfig::new(arch), 1).unwrap();
        let mut state = AdamState::new(model.num_params(), AdamConfig::default());
        let mut grad = vec![0.0; model.num_params()];
        let mut losses = Vec::new();
        for _ in 0..=50 {
            let stats = model
                .loss_and_grad::<rand_chacha::ChaCha8Rng>(&batch, None, Some(&mut grad))
                .unwrap();
            losses.push(stats.loss);
            let layout = model.layout().clone();
            adam_step(&mut model.params, &grad, &mut state, 1e-5, Some(&layout)).unwrap();
        }
        assert!(losses[50] < losses[0], "{arch}: {} -> {}", losses[0], losses[50]);
    }
}

#[test]
fn training_is_reproducible_across_runs_and_thread_counts() {
    let ds = small_dataset(10, 12);
    for arch in [Architecture::Deeponet, Architecture::FnoPose] {
        let mut config = quick_config(arch, 6);
        config.model.dropout = 0.2;
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| train(&ds, &config).unwrap())
        };
        let (a, b, c) = (run(1), run(1), run(3));
        for other in [&b, &c] {
            assert_eq!(bits(&a.model.params), bits(&other.model.params), "{arch}");
            let ta: Vec<_> = a.record.iter().map(|r| r.trajectory()).collect();
            let tb: Vec<_> = other.record.iter().map(|r| r.trajectory()).collect();
            assert_eq!(ta, tb, "{arch}");
        }
        assert_eq!(a.epochs(), 6);
    }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let ds = small_dataset(10, 13);
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick_config(Architecture::DeeponetPose, 12);
    config.model.dropout = 0.1;
    config.checkpoint_every = 5;
    config.output_dir = Some(dir.path().to_path_buf());
    let full = train(&ds, &config).unwrap();
    assert_eq!(
        full.final_checkpoint.as_deref(),
        Some(dir.path().join("final.ckpt").as_path())
    );
    assert!(dir.path().join("train_record.csv").exists());

    let ckpt = load_checkpoint_for(&dir.path().join("latest.ckpt"), &config.model).unwrap();
    assert_eq!(ckpt.epoch, 10);
    let mut resumed_config = config.clone();
    resumed_config.output_dir = None;
    let resumed = resume(&ds, &resumed_config, ckpt).unwrap();
    assert_eq!(bits(&full.model.params), bits(&resumed.model.params));
    assert_eq!(full.optimizer, resumed.optimizer);
    let ta: Vec<_> = full.record.iter().map(|r| r.trajectory()).collect();
    let tb: Vec<_> = resumed.record.iter().map(|r| r.trajectory()).collect();
    assert_eq!(ta, tb);
}

#[test]
fn checkpoints_round_trip_bitwise_with_optimizer_state() {
    let ds = small_dataset(10, 14);
    let config = quick_config(Architecture::Fno, 3);
    let out = train(&ds, &config).unwrap();
    let ckpt = Checkpoint {
        model: out.model.clone(),
        optimizer: Some(out.optimizer.clone()),
        epoch: out.record.len(),
        seed: config.seed,
        record: out.record.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(bits(&back.model.params), bits(&ckpt.model.params));
    let (o1, o2) = (back.optimizer.as_ref().unwrap(), ckpt.optimizer.as_ref().unwrap());
    assert_eq!(bits(&o1.m), bits(&o2.m));
    assert_eq!(bits(&o1.v), bits(&o2.v));
    assert_eq!(o1.t, o2.t);
    assert_eq!(back, ckpt);
    assert_eq!(encode_checkpoint(&back).unwrap(), std::fs::read(&path).unwrap());

    let other = ModelConfig::reduced(Architecture::Deeponet);
    assert!(matches!(
        load_checkpoint_for(&path, &other),
        Err(TrainError::Checkpoint(_))
    ));
}

#[test]
fn inference_only_checkpoints_cannot_resume() {
    let ds = small_dataset(10, 15);
    let config = quick_config(Architecture::Deeponet, 2);
    let out = train(&ds, &config).unwrap();
    let ckpt = Checkpoint {
        model: out.model,
        optimizer: None,
        epoch: out.record.len(),
        seed: config.seed,
        record: out.record,
    };
    let back = decode_checkpoint(&encode_checkpoint(&ckpt).unwrap()).unwrap();
    assert!(back.optimizer.is_none());
    assert!(matches!(resume(&ds, &config, back), Err(TrainError::Checkpoint(_))));
}

#[test]
fn corrupted_checkpoints_are_detected() {
    let model = Model::new(&ModelConfig::reduced(Architecture::FnoPose), 2).unwrap();
    let ckpt = Checkpoint {
        optimizer: Some(AdamState::new(model.num_params(), AdamConfig::default())),
        model,
        epoch: 0,
        seed: 2,
        record: Vec::new(),
    };
    let bytes = encode_checkpoint(&ckpt).unwrap();
    let mut rng = stream(9, Domain::Subset, 0);
    for _ in 0..20 {
        let mut bad = bytes.clone();
        let at = rng.gen_range(bytes.len() / 2..bytes.len() - 4);
        bad[at] ^= 1 << rng.gen_range(0..8);
        let err = decode_checkpoint(&bad).unwrap_err();
        assert!(
            matches!(err, TrainError::Format(FormatError::Checksum { .. })),
            "byte {at}: {err}"
        );
    }
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn divergence_reports_the_last_checkpoint() {
    let ds = small_dataset(10, 16);
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick_config(Architecture::Deeponet, 50);
    config.batch_size = 8;
    config.schedule = LrSchedule {
        initial: 1e200,
        peak: 1e200,
        end: 1e200,
        ..Default::default()
    };
    config.checkpoint_every = 1;
    config.output_dir = Some(dir.path().to_path_buf());
    match train(&ds, &config) {
        Err(TrainError::NonFinite { last_checkpoint, .. }) => {
            let path = last_checkpoint.expect("a checkpoint precedes the blow-up");
            let ckpt = load_checkpoint(&path).unwrap();
            assert!(ckpt.model.params.iter().all(|p| p.is_finite()));
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.epochs())),
    }
}

#[test]
fn config_errors_are_rejected_before_training() {
    let ds = small_dataset(10, 17);
    let mut config = quick_config(Architecture::Fno, 2);
    config.batch_size = 0;
    assert!(matches!(train(&ds, &config), Err(TrainError::Config(_))));
    let mut config = quick_config(Architecture::Fno, 2);
    config.schedule.horizon = 1;
    config.max_epochs = 5;
    assert!(train(&ds, &config).is_err());
}
