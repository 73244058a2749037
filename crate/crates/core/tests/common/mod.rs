//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use tdcrop::dataset::{normalize_design, sample_design, NormalizationSpec, ParameterRanges};
use tdcrop::neuralops::{Activation, Batch, DenseArray, DenseLayer, FourierWeights, Model, SpectralMixing};
use tdcrop::rng::{stream, Domain};
use tdcrop::TENDON_CHANNELS;

/// Scalar-loop evaluation of a dense stack using `std` tanh.
pub fn mlp_scalar(params: &[f64], layers: &[DenseLayer], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in layers {
        let mut z = vec![0.0; layer.fan_out];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = params[layer.bias.start + j];
            for (i, hi) in h.iter().enumerate() {
                acc += hi * params[layer.weight.start + i * layer.fan_out + j];
            }
            *zj = match layer.activation {
                Activation::Tanh => acc.tanh(),
                Activation::Relu => acc.max(0.0),
                Activation::Identity => acc,
            };
        }
        h = z;
    }
    h
}

/// Complex `(re, im)` product.
fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Fourier layer by brute-force DFT: per channel, `X_m = Σ_j x_j e^{-2πimj/n}`,
/// mix, then the real inverse transform of the retained modes.
pub fn dft_fourier_layer(x: &DenseArray, w: &FourierWeights) -> Vec<f64> {
    let (n, ch, modes) = (x.shape[0], w.channels, w.modes);
    let cc = ch * ch;
    let tau = 2.0 * std::f64::consts::PI;
    let mut y = vec![0.0; n * ch];
    let mut spectrum = vec![vec![(0.0, 0.0); ch]; modes];
    for (m, row) in spectrum.iter_mut().enumerate() {
        for (c, val) in row.iter_mut().enumerate() {
            for j in 0..n {
                let t = -tau * (m * j) as f64 / n as f64;
                let v = x.values[j * ch + c];
                val.0 += v * t.cos();
                val.1 += v * t.sin();
            }
        }
    }
    for m in 0..modes {
        for o in 0..ch {
            let mut acc = (0.0, 0.0);
            for i in 0..ch {
                let a = match w.mixing {
                    SpectralMixing::SharedReal => (w.spectral[i * ch + o], 0.0),
                    SpectralMixing::PerModeComplex => (
                        w.spectral[2 * m * cc + i * ch + o],
                        w.spectral[(2 * m + 1) * cc + i * ch + o],
                    ),
                };
                let p = cmul(spectrum[m][i], a);
                acc.0 += p.0;
                acc.1 += p.1;
            }
            for j in 0..n {
                let contribution = if m == 0 {
                    acc.0
                } else {
                    let t = tau * (m * j) as f64 / n as f64;
                    2.0 * cmul(acc, (t.cos(), t.sin())).0
                };
                y[j * ch + o] += contribution / n as f64;
            }
        }
    }
    for j in 0..n {
        for o in 0..ch {
            let mut v = w.bias[o]
                + if w.mixing == SpectralMixing::SharedReal {
                    w.spectral_bias[o]
                } else {
                    0.0
                };
            for i in 0..ch {
                v += x.values[j * ch + i] * w.pointwise[i * ch + o];
            }
            y[j * ch + o] += v;
        }
    }
    y
}

/// Random layer and input with `n ≥ 2·modes`.
pub fn random_fourier_instance<R: Rng>(rng: &mut R) -> (DenseArray, FourierWeights) {
    let modes = rng.gen_range(1..=5);
    let n = rng.gen_range(2 * modes..=24);
    let ch = rng.gen_range(1..=6);
    let mixing = if rng.gen_bool(0.5) {
        SpectralMixing::SharedReal
    } else {
        SpectralMixing::PerModeComplex
    };
    let mut w = FourierWeights::zeros(ch, modes, mixing);
    for v in w
        .spectral
        .iter_mut()
        .chain(&mut w.spectral_bias)
        .chain(&mut w.pointwise)
        .chain(&mut w.bias)
    {
        *v = rng.gen_range(-1.0..1.0);
    }
    let x = DenseArray::new(vec![n, ch], (0..n * ch).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    (x, w)
}

/// Random designs on a uniform `nodes` grid with small random targets.
pub fn synthetic_batch(seed: u64, count: usize, nodes: usize) -> Batch {
    let ranges = ParameterRanges::default();
    let norm = NormalizationSpec::default();
    let mut rng = stream(seed, Domain::Sample, 0);
    let mut batch = Batch {
        designs: vec![],
        inputs: vec![],
        arclengths: vec![],
        s_inputs: vec![],
        targets: vec![],
        nodes,
    };
    for _ in 0..count {
        let d = sample_design(&mut rng, &ranges);
        batch.inputs.extend(normalize_design(&d, &norm));
        batch
            .arclengths
            .extend((0..nodes).map(|j| d.length * j as f64 / (nodes - 1) as f64));
        let start = batch.s_inputs.len();
        batch
            .s_inputs
            .extend(batch.arclengths[start..].iter().map(|&s| norm.arclength_input(s)));
        batch
            .targets
            .extend((0..nodes * TENDON_CHANNELS).map(|_| rng.gen_range(-0.5..0.5)));
        batch.designs.push(d);
    }
    batch
}

/// Outcome of a central-difference sweep over every parameter.
#[derive(Debug)]
pub struct GradientReport {
    pub checked: usize,
    pub failures: Vec<(String, usize, f64, f64)>,
    pub worst_relative: f64,
}

/// Compares reverse-mode gradients with central differences (`h = 1e-6`)
/// on every parameter; passes entries within relative 1e-4 or absolute 1e-8.
pub fn finite_difference_sweep(model: &Model, batch: &Batch) -> GradientReport {
    let mut grad = vec![0.0; model.num_params()];
    model
        .loss_and_grad::<rand_chacha::ChaCha8Rng>(batch, None, Some(&mut grad))
        .unwrap();
    let h = 1e-6;
    let mut probe = model.clone();
    let mut report = GradientReport {
        checked: 0,
        failures: vec![],
        worst_relative: 0.0,
    };
    for k in 0..model.num_params() {
        let orig = probe.params[k];
        probe.params[k] = orig + h;
        let up = probe.batch_loss(batch).unwrap();
        probe.params[k] = orig - h;
        let down = probe.batch_loss(batch).unwrap();
        probe.params[k] = orig;
        let fd: f64 = (up - down) / (2.0 * h);
        let err = (fd - grad[k]).abs();
        let rel = err / fd.abs().max(grad[k].abs()).max(f64::MIN_POSITIVE);
        report.checked += 1;
        if err > 1e-8 {
            report.worst_relative = report.worst_relative.max(rel);
            if rel > 1e-4 {
                let block = model.layout().owner(k).unwrap_or("?").to_string();
                report.failures.push((block, k, fd, grad[k]));
            }
        }
    }
    report
}
