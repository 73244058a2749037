use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dropout::DropoutCtx;
use super::linalg::{
    accumulate_column_sums, add_row_bias, matmul, matmul_nt, matmul_tn, relu_backward, relu_in_place, tanh_backward,
    tanh_in_place,
};
use super::params::{Init, ParamLayout};
use super::{DenseArray, ModelError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn forward(self, x: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => tanh_in_place(x),
            Activation::Relu => relu_in_place(x),
        }
    }

    /// `dy ← dy · σ′` given the activation outputs `y`.
    fn backward(self, y: &[f64], dy: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => tanh_backward(y, dy),
            Activation::Relu => relu_backward(y, dy),
        }
    }
}

/// Affine map `y = σ(x·W + b)` with `W` stored `fan_in × fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn declare(
        layout: &mut ParamLayout,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
    ) -> Self {
        let weight = layout.push(
            format!("{name}.weight"),
            &[fan_in, fan_out],
            Init::Glorot { fan_in, fan_out },
        );
        let bias = layout.push(format!("{name}.bias"), &[fan_out], Init::Zeros);
        DenseLayer {
            weight,
            bias,
            fan_in,
            fan_out,
            activation,
        }
    }

    /// Pre-activation `x·W + b` for `rows` rows.
    pub fn affine(&self, params: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = vec![0.0; rows * self.fan_out];
        matmul(
            rows,
            self.fan_in,
            self.fan_out,
            x,
            &params[self.weight.clone()],
            0.0,
            &mut y,
        );
        add_row_bias(&mut y, &params[self.bias.clone()]);
        y
    }

    /// Accumulates parameter gradients for upstream `dy` (already through the
    /// activation) and returns `dx` if requested.
    pub fn backward_affine(
        &self,
        params: &[f64],
        x: &[f64],
        dy: &[f64],
        rows: usize,
        grad: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        matmul_tn(
            self.fan_in,
            rows,
            self.fan_out,
            x,
            dy,
            1.0,
            &mut grad[self.weight.clone()],
        );
        accumulate_column_sums(dy, &mut grad[self.bias.clone()]);
        want_dx.then(|| {
            let mut dx = vec![0.0; rows * self.fan_in];
            matmul_nt(
                rows,
                self.fan_out,
                self.fan_in,
                dy,
                &params[self.weight.clone()],
                0.0,
                &mut dx,
            );
            dx
        })
    }
}

/// Stack of dense layers; hidden layers share one activation, the last is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayout {
    pub layers: Vec<DenseLayer>,
}

/// Values saved by a forward pass for the backward pass.
pub struct MlpTape {
    rows: usize,
    input: Vec<f64>,
    /// Post-activation, post-dropout output of every executed layer.
    outputs: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map_or(&self.input, Vec::as_slice)
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.outputs.pop().unwrap_or(self.input)
    }
}

impl MlpLayout {
    /// Declares layers `widths[0] → widths[1] → … → widths[last]`.
    pub fn declare(layout: &mut ParamLayout, prefix: &str, widths: &[usize], hidden: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let count = widths.len() - 1;
        let layers = (0..count)
            .map(|l| {
                let act = if l + 1 == count { Activation::Identity } else { hidden };
                DenseLayer::declare(layout, &format!("{prefix}.{l}"), widths[l], widths[l + 1], act)
            })
            .collect();
        MlpLayout { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    /// Runs the first `upto` layers. Dropout (if any) follows every hidden
    /// activation.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &[f64],
        x: &[f64],
        rows: usize,
        upto: usize,
        mut dropout: Option<&mut DropoutCtx<'_, R>>,
    ) -> MlpTape {
        assert_eq!(x.len(), rows * self.input_dim(), "MLP input shape");
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(upto);
        let mut masks = Vec::with_capacity(upto);
        for (l, layer) in self.layers[..upto].iter().enumerate() {
            let input = if l == 0 { x } else { &outputs[l - 1] };
            let mut y = layer.affine(params, input, rows);
            layer.activation.forward(&mut y);
            let hidden = l + 1 < self.layers.len();
            let mask = match (&mut dropout, hidden) {
                (Some(ctx), true) => ctx.apply(&mut y),
                _ => None,
            };
            outputs.push(y);
            masks.push(mask);
        }
        MlpTape {
            rows,
            input: x.to_vec(),
            outputs,
            masks,
        }
    }

    /// Back-propagates `dy` (gradient w.r.t. the tape output) through the
    /// executed layers, accumulating into `grad`.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &MlpTape,
        dy: Vec<f64>,
        grad: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let mut d = dy;
        let executed = tape.outputs.len();
        for l in (0..executed).rev() {
            let layer = &self.layers[l];
            let out = &tape.outputs[l];
            match &tape.masks[l] {
                Some(mask) => {
                    // Undo the inverted-dropout scaling to recover σ(z) on kept units.
                    let pre: Vec<f64> = out
                        .iter()
                        .zip(mask)
                        .map(|(o, m)| if *m == 0.0 { 0.0 } else { o / m })
                        .collect();
                    d.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                    layer.activation.backward(&pre, &mut d);
                }
                None => layer.activation.backward(out, &mut d),
            }
            let input = if l == 0 { &tape.input } else { &tape.outputs[l - 1] };
            match layer.backward_affine(params, input, &d, tape.rows, grad, l > 0 || want_dx) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }
}

/// Self-contained MLP with its own parameter vector.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub layout: MlpLayout,
    pub param_layout: ParamLayout,
    pub values: Vec<f64>,
}

impl MlpParams {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, rng: &mut R) -> Self {
        let mut param_layout = ParamLayout::default();
        let layout = MlpLayout::declare(&mut param_layout, "mlp", widths, hidden);
        let values = param_layout.initialize(rng);
        MlpParams {
            layout,
            param_layout,
            values,
        }
    }
}

/// Evaluates the MLP on a `[batch, in]` array.
pub fn mlp_forward(params: &MlpParams, x: &DenseArray) -> Result<DenseArray, ModelError> {
    let [rows, cols] = x.dims2()?;
    if cols != params.layout.input_dim() {
        return Err(ModelError::Shape(format!(
            "MLP expects {} inputs, got {cols}",
            params.layout.input_dim()
        )));
    }
    let tape = params.layout.forward::<rand_chacha::ChaCha8Rng>(
        &params.values,
        &x.values,
        rows,
        params.layout.layers.len(),
        None,
    );
    DenseArray::new(vec![rows, params.layout.output_dim()], tape.into_output())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn zero_weights_give_bias() {
        let mut p = MlpParams::new(&[3, 4, 2], Activation::Tanh, &mut stream(1, Domain::Init, 0));
        p.values.iter_mut().for_each(|v| *v = 0.0);
        let last = p.layout.layers[1].bias.clone();
        p.values[last.clone()].copy_from_slice(&[0.5, -1.5]);
        let x = DenseArray::new(vec![2, 3], vec![1.0, 2.0, 3.0, -4.0, 5.0, 6.0]).unwrap();
        let y = mlp_forward(&p, &x).unwrap();
        assert_eq!(y.values, vec![0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn identity_layer() {
        let mut p = MlpParams::new(&[3, 3], Activation::Tanh, &mut stream(1, Domain::Init, 0));
        let w = p.layout.layers[0].weight.clone();
        p.values.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..3 {
            p.values[w.start + 4 * i] = 1.0;
        }
        let x = DenseArray::new(vec![1, 3], vec![0.1, -2.0, 7.0]).unwrap();
        assert_eq!(mlp_forward(&p, &x).unwrap().values, x.values);
    }

    #[test]
    fn matches_scalar_loops() {
        let p = MlpParams::new(&[3, 5, 2], Activation::Tanh, &mut stream(7, Domain::Init, 0));
        let x = DenseArray::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let y = mlp_forward(&p, &x).unwrap();
        let v = &p.values;
        let (l0, l1) = (&p.layout.layers[0], &p.layout.layers[1]);
        for r in 0..4 {
            let mut h = [0.0; 5];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut z = v[l0.bias.start + j];
                for i in 0..3 {
                    z += x.values[r * 3 + i] * v[l0.weight.start + i * 5 + j];
                }
                *hj = z.tanh();
            }
            for k in 0..2 {
                let mut z = v[l1.bias.start + k];
                for (j, hj) in h.iter().enumerate() {
                    z += hj * v[l1.weight.start + j * 2 + k];
                }
                assert!((y.values[r * 2 + k] - z).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_bad_width() {
        let p = MlpParams::new(&[3, 2], Activation::Tanh, &mut stream(7, Domain::Init, 0));
        assert!(mlp_forward(&p, &DenseArray::zeros(vec![2, 4])).is_err());
    }
}
