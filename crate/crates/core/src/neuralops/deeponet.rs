//! Stacked DeepONet: `out[j, k] = Σ_ℓ B[k, ℓ] · T(s_j)[k, ℓ]`.
//!
//! The batched path never materializes `T(s_j)` (`c·p` values per node). The
//! trunk's last layer is affine, `T = h·W + c_T`, so for each design
//! `out = h · M + d` with `M[q, k] = Σ_ℓ W[q, kp+ℓ] B[k, ℓ]` and
//! `d[k] = Σ_ℓ c_T[kp+ℓ] B[k, ℓ]`. That moves the `c·p`-wide product from
//! every node to once per design.

use rand::Rng;

use super::dropout::DropoutCtx;
use super::linalg::{matmul, matmul_nt, matmul_tn};
use super::mlp::{Activation, MlpLayout, MlpTape};
use super::params::ParamLayout;
use super::{DenseArray, ModelError};
use crate::DESIGN_DIM;

#[derive(Clone, Debug, PartialEq)]
pub struct DeepOnetNet {
    pub branch: MlpLayout,
    pub trunk: MlpLayout,
    pub channels: usize,
    pub basis: usize,
}

pub(crate) struct DeepOnetTape {
    branch: MlpTape,
    trunk: MlpTape,
    /// Per design: `M` (`trunk_width × channels`).
    folded: Vec<f64>,
    batch: usize,
    nodes: usize,
}

impl DeepOnetNet {
    #[allow(clippy::too_many_arguments)]
    pub fn declare(
        layout: &mut ParamLayout,
        channels: usize,
        basis: usize,
        branch_width: usize,
        branch_layers: usize,
        trunk_width: usize,
        trunk_layers: usize,
    ) -> Self {
        let widths = |input: usize, width: usize, layers: usize| {
            let mut w = vec![input];
            w.extend(std::iter::repeat(width).take(layers - 1));
            w.push(channels * basis);
            w
        };
        let branch = MlpLayout::declare(
            layout,
            "branch",
            &widths(DESIGN_DIM, branch_width, branch_layers),
            Activation::Tanh,
        );
        let trunk = MlpLayout::declare(layout, "trunk", &widths(1, trunk_width, trunk_layers), Activation::Tanh);
        DeepOnetNet {
            branch,
            trunk,
            channels,
            basis,
        }
    }

    fn trunk_width(&self) -> usize {
        self.trunk.layers.last().expect("trunk has layers").fan_in
    }

    /// Branch coefficients `B` (`batch × c·p`) for normalized designs.
    pub fn branch_output(&self, params: &[f64], inputs: &[f64], batch: usize) -> Vec<f64> {
        self.branch
            .forward::<rand_chacha::ChaCha8Rng>(params, inputs, batch, self.branch.layers.len(), None)
            .into_output()
    }

    /// Batched forward pass; returns `batch·nodes × channels` outputs.
    pub(crate) fn forward<R: Rng + ?Sized>(
        &self,
        params: &[f64],
        inputs: &[f64],
        arclengths: &[f64],
        batch: usize,
        nodes: usize,
        mut dropout: Option<&mut DropoutCtx<'_, R>>,
    ) -> (Vec<f64>, DeepOnetTape) {
        let (c, p) = (self.channels, self.basis);
        let rows = batch * nodes;
        let branch = self
            .branch
            .forward(params, inputs, batch, self.branch.layers.len(), dropout.as_deref_mut());
        let trunk = self
            .trunk
            .forward(params, arclengths, rows, self.trunk.layers.len() - 1, dropout);
        let last = self.trunk.layers.last().expect("trunk has layers");
        let (w, bias) = (&params[last.weight.clone()], &params[last.bias.clone()]);
        let q_dim = self.trunk_width();

        let coeffs = branch.output();
        let hidden = trunk.output();
        let mut folded = vec![0.0; batch * q_dim * c];
        let mut out = vec![0.0; rows * c];
        for b in 0..batch {
            let bb = &coeffs[b * c * p..(b + 1) * c * p];
            let m = &mut folded[b * q_dim * c..(b + 1) * q_dim * c];
            for q in 0..q_dim {
                let wq = &w[q * c * p..(q + 1) * c * p];
                for k in 0..c {
                    m[q * c + k] = dot(&wq[k * p..(k + 1) * p], &bb[k * p..(k + 1) * p]);
                }
            }
            let ob = &mut out[b * nodes * c..(b + 1) * nodes * c];
            matmul(
                nodes,
                q_dim,
                c,
                &hidden[b * nodes * q_dim..(b + 1) * nodes * q_dim],
                m,
                0.0,
                ob,
            );
            for k in 0..c {
                let offset = dot(&bias[k * p..(k + 1) * p], &bb[k * p..(k + 1) * p]);
                ob.iter_mut().skip(k).step_by(c).for_each(|v| *v += offset);
            }
        }
        (
            out,
            DeepOnetTape {
                branch,
                trunk,
                folded,
                batch,
                nodes,
            },
        )
    }

    pub(crate) fn backward(&self, params: &[f64], tape: &DeepOnetTape, d_out: &[f64], grad: &mut [f64]) {
        let (c, p) = (self.channels, self.basis);
        let (batch, nodes) = (tape.batch, tape.nodes);
        let q_dim = self.trunk_width();
        let last = self.trunk.layers.last().expect("trunk has layers");
        let (w, bias) = (&params[last.weight.clone()], &params[last.bias.clone()]);
        let coeffs = tape.branch.output();
        let hidden = tape.trunk.output();

        let mut d_coeffs = vec![0.0; batch * c * p];
        let mut d_hidden = vec![0.0; batch * nodes * q_dim];
        let mut d_w = vec![0.0; q_dim * c * p];
        let mut d_bias = vec![0.0; c * p];
        let mut d_m = vec![0.0; q_dim * c];
        for b in 0..batch {
            let db_out = &d_out[b * nodes * c..(b + 1) * nodes * c];
            let hb = &hidden[b * nodes * q_dim..(b + 1) * nodes * q_dim];
            let m = &tape.folded[b * q_dim * c..(b + 1) * q_dim * c];
            matmul_tn(q_dim, nodes, c, hb, db_out, 0.0, &mut d_m);
            matmul_nt(
                nodes,
                c,
                q_dim,
                db_out,
                m,
                0.0,
                &mut d_hidden[b * nodes * q_dim..(b + 1) * nodes * q_dim],
            );
            let bb = &coeffs[b * c * p..(b + 1) * c * p];
            let dbb = &mut d_coeffs[b * c * p..(b + 1) * c * p];
            for q in 0..q_dim {
                let wq = &w[q * c * p..(q + 1) * c * p];
                let dwq = &mut d_w[q * c * p..(q + 1) * c * p];
                for k in 0..c {
                    let g = d_m[q * c + k];
                    axpy(g, &bb[k * p..(k + 1) * p], &mut dwq[k * p..(k + 1) * p]);
                    axpy(g, &wq[k * p..(k + 1) * p], &mut dbb[k * p..(k + 1) * p]);
                }
            }
            for k in 0..c {
                let g: f64 = db_out.iter().skip(k).step_by(c).sum();
                axpy(g, &bb[k * p..(k + 1) * p], &mut d_bias[k * p..(k + 1) * p]);
                axpy(g, &bias[k * p..(k + 1) * p], &mut dbb[k * p..(k + 1) * p]);
            }
        }
        grad[last.weight.clone()]
            .iter_mut()
            .zip(&d_w)
            .for_each(|(g, v)| *g += v);
        grad[last.bias.clone()]
            .iter_mut()
            .zip(&d_bias)
            .for_each(|(g, v)| *g += v);
        self.trunk.backward(params, &tape.trunk, d_hidden, grad, false);
        self.branch.backward(params, &tape.branch, d_coeffs, grad, false);
    }

    /// Direct evaluation for one design: full trunk output, then per-channel
    /// inner products.
    pub fn reference(&self, params: &[f64], d_norm: &[f64], s_grid: &[f64]) -> Result<DenseArray, ModelError> {
        if d_norm.len() != DESIGN_DIM || s_grid.is_empty() {
            return Err(ModelError::Shape(format!(
                "design of length {} on {} nodes",
                d_norm.len(),
                s_grid.len()
            )));
        }
        let (c, p, n) = (self.channels, self.basis, s_grid.len());
        let b = self.branch_output(params, d_norm, 1);
        let t = self
            .trunk
            .forward::<rand_chacha::ChaCha8Rng>(params, s_grid, n, self.trunk.layers.len(), None)
            .into_output();
        let mut out = vec![0.0; n * c];
        for j in 0..n {
            for k in 0..c {
                out[j * c + k] = dot(&b[k * p..(k + 1) * p], &t[j * c * p + k * p..j * c * p + (k + 1) * p]);
            }
        }
        DenseArray::new(vec![n, c], out)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(v, u)| *v += alpha * u);
}
