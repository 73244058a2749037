//! Truncated Fourier convolution along the node axis.
//!
//! Forward transform unnormalized, inverse scaled by `1/n`, modes `0..modes`.
//! Only a handful of modes survive the truncation, so the batched kernel
//! evaluates the real DFT of the retained modes as small dense products
//! (`analysis`/`synthesis` matrices) instead of full FFTs; [`fourier_layer_fft`]
//! performs the same computation through `rustfft` and serves as a cross-check.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::linalg::{accumulate_column_sums, add_row_bias, gemm_scaled, matmul, matmul_tn};
use super::{DenseArray, ModelError};

/// Parameterization of the spectral multipliers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMixing {
    /// One real `C×C` matrix applied to every retained mode, plus a bias on
    /// the spectral path.
    #[default]
    SharedReal,
    /// An independent complex `C×C` matrix per retained mode.
    PerModeComplex,
}

impl SpectralMixing {
    /// Number of reals in the spectral weights (without bias).
    pub fn weight_len(self, channels: usize, modes: usize) -> usize {
        match self {
            SpectralMixing::SharedReal => channels * channels,
            SpectralMixing::PerModeComplex => 2 * modes * channels * channels,
        }
    }

    pub fn has_bias(self) -> bool {
        self == SpectralMixing::SharedReal
    }
}

/// Real DFT restricted to the first `modes` frequencies.
///
/// Spectral components are ordered `[Re₀, Re₁, Im₁, Re₂, Im₂, …]`; the
/// imaginary part of mode 0 vanishes for real input and is dropped by the
/// inverse real transform, so it is not represented.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBasis {
    pub n: usize,
    pub modes: usize,
    /// `components × n`: `X_c = Σ_j analysis[c][j] x_j`.
    pub analysis: Vec<f64>,
    /// `n × components`: `y_j = Σ_c synthesis[j][c] Y_c`.
    pub synthesis: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(n: usize, modes: usize) -> Result<Self, ModelError> {
        if modes == 0 || n < 2 * modes {
            return Err(ModelError::Shape(format!(
                "{n} nodes cannot carry {modes} modes (need n ≥ 2·modes)"
            )));
        }
        let comps = 2 * modes - 1;
        let mut analysis = vec![0.0; comps * n];
        let mut synthesis = vec![0.0; n * comps];
        let inv_n = 1.0 / n as f64;
        for j in 0..n {
            analysis[j] = 1.0;
            synthesis[j * comps] = inv_n;
            for m in 1..modes {
                let theta = 2.0 * PI * ((m * j) % n) as f64 / n as f64;
                let (sin, cos) = theta.sin_cos();
                analysis[(2 * m - 1) * n + j] = cos;
                analysis[2 * m * n + j] = -sin;
                synthesis[j * comps + 2 * m - 1] = 2.0 * inv_n * cos;
                synthesis[j * comps + 2 * m] = -2.0 * inv_n * sin;
            }
        }
        Ok(SpectralBasis {
            n,
            modes,
            analysis,
            synthesis,
        })
    }

    pub fn components(&self) -> usize {
        2 * self.modes - 1
    }
}

/// Spectral path of one Fourier layer over a batch of `batch` signals, each
/// `n × channels` (rows are nodes).
pub(crate) struct SpectralPath<'a> {
    pub basis: &'a SpectralBasis,
    pub channels: usize,
    pub mixing: SpectralMixing,
    pub weights: &'a [f64],
    pub bias: Option<&'a [f64]>,
}

impl SpectralPath<'_> {
    /// Adds the spectral path of `x` into `y`; returns the truncated spectrum
    /// (`components × batch × channels`) needed for the backward pass.
    pub fn forward(&self, x: &[f64], batch: usize, y: &mut [f64]) -> Vec<f64> {
        let (n, ch, comps) = (self.basis.n, self.channels, self.basis.components());
        let mut u = vec![0.0; comps * batch * ch];
        for b in 0..batch {
            let xb = &x[b * n * ch..(b + 1) * n * ch];
            for c in 0..comps {
                let row = &mut u[(c * batch + b) * ch..(c * batch + b + 1) * ch];
                let coeff = &self.basis.analysis[c * n..(c + 1) * n];
                for (j, w) in coeff.iter().enumerate() {
                    for (r, v) in row.iter_mut().zip(&xb[j * ch..(j + 1) * ch]) {
                        *r += w * v;
                    }
                }
            }
        }
        let v = self.mix(&u, batch);
        self.synthesize(&v, batch, y);
        if let Some(bias) = self.bias {
            add_row_bias(y, bias);
        }
        u
    }

    fn block<'s>(&self, data: &'s [f64], comp: usize, batch: usize) -> &'s [f64] {
        let len = batch * self.channels;
        &data[comp * len..(comp + 1) * len]
    }

    fn matrix(&self, index: usize) -> &[f64] {
        let cc = self.channels * self.channels;
        &self.weights[index * cc..(index + 1) * cc]
    }

    fn mix(&self, u: &[f64], batch: usize) -> Vec<f64> {
        let ch = self.channels;
        let comps = self.basis.components();
        let mut v = vec![0.0; u.len()];
        match self.mixing {
            SpectralMixing::SharedReal => matmul(comps * batch, ch, ch, u, self.weights, 0.0, &mut v),
            SpectralMixing::PerModeComplex => {
                let len = batch * ch;
                matmul(
                    batch,
                    ch,
                    ch,
                    self.block(u, 0, batch),
                    self.matrix(0),
                    0.0,
                    &mut v[..len],
                );
                for m in 1..self.basis.modes {
                    let (re, im) = (self.block(u, 2 * m - 1, batch), self.block(u, 2 * m, batch));
                    let (a_re, a_im) = (self.matrix(2 * m), self.matrix(2 * m + 1));
                    let (v_re, v_im) = v[(2 * m - 1) * len..(2 * m + 1) * len].split_at_mut(len);
                    gemm_scaled(batch, ch, ch, 1.0, re, false, a_re, false, 0.0, v_re);
                    gemm_scaled(batch, ch, ch, -1.0, im, false, a_im, false, 1.0, v_re);
                    gemm_scaled(batch, ch, ch, 1.0, re, false, a_im, false, 0.0, v_im);
                    gemm_scaled(batch, ch, ch, 1.0, im, false, a_re, false, 1.0, v_im);
                }
            }
        }
        v
    }

    fn synthesize(&self, v: &[f64], batch: usize, y: &mut [f64]) {
        let (n, ch, comps) = (self.basis.n, self.channels, self.basis.components());
        for b in 0..batch {
            for j in 0..n {
                let out = &mut y[(b * n + j) * ch..(b * n + j + 1) * ch];
                for c in 0..comps {
                    let w = self.basis.synthesis[j * comps + c];
                    let row = &v[(c * batch + b) * ch..(c * batch + b + 1) * ch];
                    for (o, r) in out.iter_mut().zip(row) {
                        *o += w * r;
                    }
                }
            }
        }
    }

    /// Accumulates weight/bias gradients and adds the input gradient into `dx`.
    pub fn backward(
        &self,
        u: &[f64],
        dy: &[f64],
        batch: usize,
        grad_weights: &mut [f64],
        grad_bias: Option<&mut [f64]>,
        dx: &mut [f64],
    ) {
        let (n, ch, comps) = (self.basis.n, self.channels, self.basis.components());
        if let Some(g) = grad_bias {
            accumulate_column_sums(dy, g);
        }
        // Adjoint of synthesis.
        let mut dv = vec![0.0; comps * batch * ch];
        for b in 0..batch {
            for j in 0..n {
                let g = &dy[(b * n + j) * ch..(b * n + j + 1) * ch];
                for c in 0..comps {
                    let w = self.basis.synthesis[j * comps + c];
                    let row = &mut dv[(c * batch + b) * ch..(c * batch + b + 1) * ch];
                    for (r, v) in row.iter_mut().zip(g) {
                        *r += w * v;
                    }
                }
            }
        }
        // Adjoint of mixing.
        let cc = ch * ch;
        let mut du = vec![0.0; u.len()];
        match self.mixing {
            SpectralMixing::SharedReal => {
                matmul_tn(ch, comps * batch, ch, u, &dv, 1.0, grad_weights);
                gemm_scaled(comps * batch, ch, ch, 1.0, &dv, false, self.weights, true, 0.0, &mut du);
            }
            SpectralMixing::PerModeComplex => {
                let len = batch * ch;
                matmul_tn(
                    ch,
                    batch,
                    ch,
                    self.block(u, 0, batch),
                    self.block(&dv, 0, batch),
                    1.0,
                    &mut grad_weights[..cc],
                );
                gemm_scaled(
                    batch,
                    ch,
                    ch,
                    1.0,
                    self.block(&dv, 0, batch),
                    false,
                    self.matrix(0),
                    true,
                    0.0,
                    &mut du[..len],
                );
                for m in 1..self.basis.modes {
                    let (re, im) = (self.block(u, 2 * m - 1, batch), self.block(u, 2 * m, batch));
                    let (d_re, d_im) = (self.block(&dv, 2 * m - 1, batch), self.block(&dv, 2 * m, batch));
                    let (a_re, a_im) = (self.matrix(2 * m), self.matrix(2 * m + 1));
                    let (g_re, g_im) = grad_weights[2 * m * cc..(2 * m + 2) * cc].split_at_mut(cc);
                    gemm_scaled(ch, batch, ch, 1.0, re, true, d_re, false, 1.0, g_re);
                    gemm_scaled(ch, batch, ch, 1.0, im, true, d_im, false, 1.0, g_re);
                    gemm_scaled(ch, batch, ch, -1.0, im, true, d_re, false, 1.0, g_im);
                    gemm_scaled(ch, batch, ch, 1.0, re, true, d_im, false, 1.0, g_im);
                    let (du_re, du_im) = du[(2 * m - 1) * len..(2 * m + 1) * len].split_at_mut(len);
                    gemm_scaled(batch, ch, ch, 1.0, d_re, false, a_re, true, 0.0, du_re);
                    gemm_scaled(batch, ch, ch, 1.0, d_im, false, a_im, true, 1.0, du_re);
                    gemm_scaled(batch, ch, ch, -1.0, d_re, false, a_im, true, 0.0, du_im);
                    gemm_scaled(batch, ch, ch, 1.0, d_im, false, a_re, true, 1.0, du_im);
                }
            }
        }
        // Adjoint of analysis.
        for b in 0..batch {
            for c in 0..comps {
                let row = &du[(c * batch + b) * ch..(c * batch + b + 1) * ch];
                let coeff = &self.basis.analysis[c * n..(c + 1) * n];
                for (j, w) in coeff.iter().enumerate() {
                    let out = &mut dx[(b * n + j) * ch..(b * n + j + 1) * ch];
                    for (o, r) in out.iter_mut().zip(row) {
                        *o += w * r;
                    }
                }
            }
        }
    }
}

/// Weights of a single Fourier layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierWeights {
    pub channels: usize,
    pub modes: usize,
    pub mixing: SpectralMixing,
    /// Shared real: `C×C`. Per-mode complex: `modes × [re C×C, im C×C]`.
    pub spectral: Vec<f64>,
    /// Spectral-path bias (shared-real mixing only).
    pub spectral_bias: Vec<f64>,
    /// Pointwise weight `C×C`, applied as `x·W`.
    pub pointwise: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FourierWeights {
    pub fn zeros(channels: usize, modes: usize, mixing: SpectralMixing) -> Self {
        FourierWeights {
            channels,
            modes,
            mixing,
            spectral: vec![0.0; mixing.weight_len(channels, modes)],
            spectral_bias: vec![0.0; if mixing.has_bias() { channels } else { 0 }],
            pointwise: vec![0.0; channels * channels],
            bias: vec![0.0; channels],
        }
    }

    fn check(&self, x: &DenseArray) -> Result<usize, ModelError> {
        let [n, ch] = x.dims2()?;
        if ch != self.channels {
            return Err(ModelError::Shape(format!(
                "layer has {} channels, input has {ch}",
                self.channels
            )));
        }
        if self.spectral.len() != self.mixing.weight_len(self.channels, self.modes) {
            return Err(ModelError::Shape("spectral weight length does not match mixing".into()));
        }
        Ok(n)
    }
}

/// `spectral(x) + x·W + b` for one `n × C` signal.
pub fn fourier_layer(x: &DenseArray, weights: &FourierWeights) -> Result<DenseArray, ModelError> {
    let n = weights.check(x)?;
    let basis = SpectralBasis::new(n, weights.modes)?;
    let ch = weights.channels;
    let mut y = vec![0.0; n * ch];
    matmul(n, ch, ch, &x.values, &weights.pointwise, 0.0, &mut y);
    add_row_bias(&mut y, &weights.bias);
    let path = SpectralPath {
        basis: &basis,
        channels: ch,
        mixing: weights.mixing,
        weights: &weights.spectral,
        bias: weights.mixing.has_bias().then_some(weights.spectral_bias.as_slice()),
    };
    path.forward(&x.values, 1, &mut y);
    DenseArray::new(vec![n, ch], y)
}

/// Same map as [`fourier_layer`], computed with full complex FFTs.
pub fn fourier_layer_fft(x: &DenseArray, weights: &FourierWeights) -> Result<DenseArray, ModelError> {
    let n = weights.check(x)?;
    SpectralBasis::new(n, weights.modes)?;
    let (ch, modes) = (weights.channels, weights.modes);
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    // spectrum[m][c] for the retained modes.
    let mut spectrum = vec![vec![Complex64::default(); ch]; modes];
    let mut buf = vec![Complex64::default(); n];
    for c in 0..ch {
        for (j, v) in buf.iter_mut().enumerate() {
            *v = Complex64::new(x.values[j * ch + c], 0.0);
        }
        forward.process(&mut buf);
        for m in 0..modes {
            spectrum[m][c] = buf[m];
        }
    }
    let cc = ch * ch;
    let mixed: Vec<Vec<Complex64>> = (0..modes)
        .map(|m| {
            (0..ch)
                .map(|o| {
                    (0..ch)
                        .map(|i| {
                            let a = match weights.mixing {
                                SpectralMixing::SharedReal => Complex64::new(weights.spectral[i * ch + o], 0.0),
                                SpectralMixing::PerModeComplex => Complex64::new(
                                    weights.spectral[2 * m * cc + i * ch + o],
                                    weights.spectral[(2 * m + 1) * cc + i * ch + o],
                                ),
                            };
                            spectrum[m][i] * a
                        })
                        .sum()
                })
                .collect()
        })
        .collect();

    let mut y = vec![0.0; n * ch];
    for c in 0..ch {
        buf.iter_mut().for_each(|v| *v = Complex64::default());
        // Inverse real transform: Hermitian completion, imaginary DC dropped.
        buf[0] = Complex64::new(mixed[0][c].re, 0.0);
        for m in 1..modes {
            buf[m] = mixed[m][c];
            buf[n - m] = mixed[m][c].conj();
        }
        inverse.process(&mut buf);
        for j in 0..n {
            let mut v = buf[j].re / n as f64;
            v += (0..ch)
                .map(|i| x.values[j * ch + i] * weights.pointwise[i * ch + c])
                .sum::<f64>();
            v += weights.bias[c];
            if weights.mixing.has_bias() {
                v += weights.spectral_bias[c];
            }
            y[j * ch + c] = v;
        }
    }
    DenseArray::new(vec![n, ch], y)
}
