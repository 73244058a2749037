//! Fourier neural operator `𝒫 ∘ 𝒜_L ∘ σ ∘ … ∘ σ ∘ 𝒜₁ ∘ ℒ` on the node grid.
//!
//! The input at node `j` is the normalized design followed by `s_j`. ReLU
//! follows Fourier layers `1..L−1`; nothing follows the lift or the last layer.

use std::ops::Range;

use rand::Rng;

use super::dropout::DropoutCtx;
use super::linalg::relu_in_place;
use super::mlp::{Activation, DenseLayer};
use super::params::{Init, ParamLayout};
use super::spectral::{SpectralBasis, SpectralMixing, SpectralPath};
use super::{DenseArray, ModelError};
use crate::DESIGN_DIM;

/// Lifted input width: design values plus arclength.
pub const FNO_INPUT_CHANNELS: usize = DESIGN_DIM + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FourierBlock {
    pub spectral: Range<usize>,
    pub spectral_bias: Option<Range<usize>>,
    /// Pointwise path `x·W + b`.
    pub pointwise: DenseLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FnoNet {
    pub lift: DenseLayer,
    pub layers: Vec<FourierBlock>,
    pub projection: DenseLayer,
    pub width: usize,
    pub modes: usize,
    pub mixing: SpectralMixing,
}

pub(crate) struct FnoTape {
    input: Vec<f64>,
    /// Input to each Fourier layer, then the projection input.
    hidden: Vec<Vec<f64>>,
    spectra: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    batch: usize,
    basis: SpectralBasis,
}

impl FnoNet {
    pub fn declare(
        layout: &mut ParamLayout,
        channels: usize,
        width: usize,
        modes: usize,
        num_layers: usize,
        mixing: SpectralMixing,
    ) -> Self {
        let lift = DenseLayer::declare(layout, "lift", FNO_INPUT_CHANNELS, width, Activation::Identity);
        let scale = 1.0 / (width * width) as f64;
        let layers = (0..num_layers)
            .map(|l| {
                let shape = match mixing {
                    SpectralMixing::SharedReal => vec![width, width],
                    SpectralMixing::PerModeComplex => vec![modes, 2, width, width],
                };
                let spectral = layout.push(format!("fourier.{l}.spectral"), &shape, Init::Uniform { scale });
                let spectral_bias = mixing
                    .has_bias()
                    .then(|| layout.push(format!("fourier.{l}.spectral_bias"), &[width], Init::Zeros));
                let pointwise = DenseLayer::declare(
                    layout,
                    &format!("fourier.{l}.pointwise"),
                    width,
                    width,
                    Activation::Identity,
                );
                FourierBlock {
                    spectral,
                    spectral_bias,
                    pointwise,
                }
            })
            .collect();
        let projection = DenseLayer::declare(layout, "projection", width, channels, Activation::Identity);
        FnoNet {
            lift,
            layers,
            projection,
            width,
            modes,
            mixing,
        }
    }

    fn path<'a>(&self, params: &'a [f64], block: &FourierBlock, basis: &'a SpectralBasis) -> SpectralPath<'a> {
        SpectralPath {
            basis,
            channels: self.width,
            mixing: self.mixing,
            weights: &params[block.spectral.clone()],
            bias: block.spectral_bias.clone().map(|r| &params[r]),
        }
    }

    /// Stacks `[d_norm, s_j]` rows for a batch of designs on a shared node count.
    pub fn assemble_input(inputs: &[f64], arclengths: &[f64], batch: usize, nodes: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(batch * nodes * FNO_INPUT_CHANNELS);
        for b in 0..batch {
            let design = &inputs[b * DESIGN_DIM..(b + 1) * DESIGN_DIM];
            for s in &arclengths[b * nodes..(b + 1) * nodes] {
                x.extend_from_slice(design);
                x.push(*s);
            }
        }
        x
    }

    pub(crate) fn forward<R: Rng + ?Sized>(
        &self,
        params: &[f64],
        inputs: &[f64],
        arclengths: &[f64],
        batch: usize,
        nodes: usize,
        mut dropout: Option<&mut DropoutCtx<'_, R>>,
    ) -> Result<(Vec<f64>, FnoTape), ModelError> {
        let basis = SpectralBasis::new(nodes, self.modes)?;
        let rows = batch * nodes;
        let input = Self::assemble_input(inputs, arclengths, batch, nodes);
        let mut h = self.lift.affine(params, &input, rows);
        let mut hidden = Vec::with_capacity(self.layers.len() + 1);
        let mut spectra = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for (l, block) in self.layers.iter().enumerate() {
            let mut z = block.pointwise.affine(params, &h, rows);
            spectra.push(self.path(params, block, &basis).forward(&h, batch, &mut z));
            let mut mask = None;
            if l + 1 < self.layers.len() {
                relu_in_place(&mut z);
                if let Some(ctx) = dropout.as_deref_mut() {
                    mask = ctx.apply(&mut z);
                }
            }
            masks.push(mask);
            hidden.push(std::mem::replace(&mut h, z));
        }
        let out = self.projection.affine(params, &h, rows);
        hidden.push(h);
        Ok((
            out,
            FnoTape {
                input,
                hidden,
                spectra,
                masks,
                batch,
                basis,
            },
        ))
    }

    pub(crate) fn backward(&self, params: &[f64], tape: &FnoTape, d_out: &[f64], grad: &mut [f64]) {
        let rows = tape.input.len() / FNO_INPUT_CHANNELS;
        let last = self.layers.len();
        let mut d = self
            .projection
            .backward_affine(params, &tape.hidden[last], d_out, rows, grad, true)
            .expect("dx requested");
        for l in (0..last).rev() {
            if l + 1 < last {
                // Post-ReLU, post-dropout output; zero exactly where the unit was
                // inactive or dropped.
                let out = &tape.hidden[l + 1];
                if let Some(mask) = &tape.masks[l] {
                    d.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                }
                d.iter_mut().zip(out).for_each(|(g, o)| {
                    if *o <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let block = &self.layers[l];
            let mut dx = block
                .pointwise
                .backward_affine(params, &tape.hidden[l], &d, rows, grad, true)
                .expect("dx requested");
            let (gw, gb) = split_grads(grad, &block.spectral, block.spectral_bias.as_ref());
            self.path(params, block, &tape.basis)
                .backward(&tape.spectra[l], &d, tape.batch, gw, gb, &mut dx);
            d = dx;
        }
        self.lift.backward_affine(params, &tape.input, &d, rows, grad, false);
    }

    /// Single design on an arbitrary grid.
    pub fn evaluate(&self, params: &[f64], d_norm: &[f64], s_grid: &[f64]) -> Result<DenseArray, ModelError> {
        if d_norm.len() != DESIGN_DIM || s_grid.is_empty() {
            return Err(ModelError::Shape(format!(
                "design of length {} on {} nodes",
                d_norm.len(),
                s_grid.len()
            )));
        }
        let (out, _) = self.forward::<rand_chacha::ChaCha8Rng>(params, d_norm, s_grid, 1, s_grid.len(), None)?;
        DenseArray::new(vec![s_grid.len(), self.projection.fan_out], out)
    }
}

/// Disjoint mutable views of a block's spectral weight and bias gradients.
fn split_grads<'g>(
    grad: &'g mut [f64],
    weights: &Range<usize>,
    bias: Option<&Range<usize>>,
) -> (&'g mut [f64], Option<&'g mut [f64]>) {
    match bias {
        None => (&mut grad[weights.clone()], None),
        Some(b) => {
            assert!(b.start >= weights.end, "spectral bias follows its weights");
            let (head, tail) = grad.split_at_mut(b.start);
            (&mut head[weights.clone()], Some(&mut tail[..b.len()]))
        }
    }
}
