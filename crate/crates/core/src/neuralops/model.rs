//! Architecture selection, batching and the training/inference entry points.

use serde::{Deserialize, Serialize};

use super::deeponet::DeepOnetNet;
use super::dropout::DropoutCtx;
use super::fno::FnoNet;
use super::loss::{offsets_on_grid, pose_loss_grad, pose_rows_to_tendons, tendon_loss_grad};
use super::params::ParamLayout;
use super::spectral::SpectralMixing;
use super::{DenseArray, ModelError};
use crate::dataset::Dataset;
use crate::rng::{stream, Domain};
use crate::rodmodel::DesignVector;
use crate::{DESIGN_DIM, POSE_CHANNELS, TENDON_CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Deeponet,
    DeeponetPose,
    Fno,
    FnoPose,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Deeponet,
        Architecture::DeeponetPose,
        Architecture::Fno,
        Architecture::FnoPose,
    ];

    pub fn is_pose(self) -> bool {
        matches!(self, Architecture::DeeponetPose | Architecture::FnoPose)
    }

    pub fn is_fno(self) -> bool {
        matches!(self, Architecture::Fno | Architecture::FnoPose)
    }

    pub fn output_channels(self) -> usize {
        if self.is_pose() {
            POSE_CHANNELS
        } else {
            TENDON_CHANNELS
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Deeponet => "deeponet",
            Architecture::DeeponetPose => "deeponet_pose",
            Architecture::Fno => "fno",
            Architecture::FnoPose => "fno_pose",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Network hyperparameters. Layer counts include the output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub branch_width: usize,
    pub branch_layers: usize,
    pub trunk_width: usize,
    pub trunk_layers: usize,
    pub basis: usize,
    pub fno_width: usize,
    pub fno_modes: usize,
    pub fno_layers: usize,
    pub spectral_mixing: SpectralMixing,
    /// Dropout rate after hidden activations (DeepONet) or between Fourier
    /// layers (FNO).
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Deeponet,
            branch_width: 64,
            branch_layers: 5,
            trunk_width: 128,
            trunk_layers: 5,
            basis: 100,
            fno_width: 128,
            fno_modes: 5,
            fno_layers: 5,
            spectral_mixing: SpectralMixing::SharedReal,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn new(architecture: Architecture) -> Self {
        ModelConfig {
            architecture,
            ..Default::default()
        }
    }

    /// Same topology with every width cut down (hidden 8, four basis
    /// functions, eight FNO channels, three modes), small enough for
    /// exhaustive finite-difference checks.
    pub fn reduced(architecture: Architecture) -> Self {
        ModelConfig {
            architecture,
            branch_width: 8,
            trunk_width: 8,
            basis: 4,
            fno_width: 8,
            fno_modes: 3,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("branch_width", self.branch_width),
            ("branch_layers", self.branch_layers),
            ("trunk_width", self.trunk_width),
            ("trunk_layers", self.trunk_layers),
            ("basis", self.basis),
            ("fno_width", self.fno_width),
            ("fno_modes", self.fno_modes),
            ("fno_layers", self.fno_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Designs gathered for one forward pass; all share one node count.
#[derive(Clone, Debug)]
pub struct Batch {
    pub designs: Vec<DesignVector>,
    /// Normalized designs, `batch × 15`.
    pub inputs: Vec<f64>,
    /// Physical arclengths, `batch × nodes`.
    pub arclengths: Vec<f64>,
    /// Arclengths as fed to the network (see `NormalizationSpec::arclength_input`).
    pub s_inputs: Vec<f64>,
    /// Tendon positions, `batch × nodes × 12` (empty when unknown).
    pub targets: Vec<f64>,
    pub nodes: usize,
}

impl Batch {
    pub fn gather(ds: &Dataset, indices: &[usize]) -> Self {
        let nodes = ds.num_nodes();
        let mut batch = Batch {
            designs: Vec::with_capacity(indices.len()),
            inputs: Vec::with_capacity(indices.len() * DESIGN_DIM),
            arclengths: Vec::with_capacity(indices.len() * nodes),
            s_inputs: Vec::with_capacity(indices.len() * nodes),
            targets: Vec::with_capacity(indices.len() * nodes * TENDON_CHANNELS),
            nodes,
        };
        for &j in indices {
            batch.designs.push(ds.designs[j]);
            batch.inputs.extend_from_slice(&ds.normalized[j]);
            batch.arclengths.extend_from_slice(ds.arclengths_of(j));
            let norm = &ds.manifest.normalization;
            batch
                .s_inputs
                .extend(ds.arclengths_of(j).iter().map(|&s| norm.arclength_input(s)));
            batch.targets.extend_from_slice(ds.target(j));
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    fn check(&self, need_targets: bool) -> Result<(), ModelError> {
        let b = self.len();
        let ok = b > 0
            && self.nodes > 0
            && self.inputs.len() == b * DESIGN_DIM
            && self.arclengths.len() == b * self.nodes
            && self.s_inputs.len() == b * self.nodes
            && (!need_targets || self.targets.len() == b * self.nodes * TENDON_CHANNELS);
        if !ok {
            return Err(ModelError::Shape(format!(
                "inconsistent batch of {b} designs on {} nodes",
                self.nodes
            )));
        }
        if self
            .inputs
            .iter()
            .chain(&self.arclengths)
            .chain(&self.s_inputs)
            .chain(&self.targets)
            .any(|v| !v.is_finite())
        {
            return Err(ModelError::NonFinite { block: "batch".into() });
        }
        Ok(())
    }
}

/// Loss statistics of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    /// Mean per-design loss.
    pub loss: f64,
    /// Mean per-design relative ℓ₂ error of the tendon positions.
    pub relative_l2: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Net {
    DeepOnet(DeepOnetNet),
    Fno(FnoNet),
}

enum Tape {
    DeepOnet(super::deeponet::DeepOnetTape),
    Fno(super::fno::FnoTape),
}

/// Pose variants emit `(r̃, a₁, a₂)` relative to a fixed reference frame: the
/// network output is offset by `a₁ += e_x`, `a₂ += e_y`, so a zero output
/// reads as the identity frame rather than a degenerate one.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    net: Net,
    layout: ParamLayout,
    pub params: Vec<f64>,
}

impl Model {
    /// Builds the network and draws initial weights from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let (net, layout) = Self::declare(config)?;
        let params = layout.initialize(&mut stream(seed, Domain::Init, 0));
        Ok(Model {
            config: config.clone(),
            net,
            layout,
            params,
        })
    }

    /// Rebuilds a model around an existing parameter vector.
    pub fn with_params(config: &ModelConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        let (net, layout) = Self::declare(config)?;
        if params.len() != layout.total() {
            return Err(ModelError::Shape(format!(
                "{} parameters supplied, {} expected",
                params.len(),
                layout.total()
            )));
        }
        if let Some(block) = layout.first_non_finite(&params) {
            return Err(ModelError::NonFinite {
                block: block.to_string(),
            });
        }
        Ok(Model {
            config: config.clone(),
            net,
            layout,
            params,
        })
    }

    fn declare(config: &ModelConfig) -> Result<(Net, ParamLayout), ModelError> {
        config.validate()?;
        let mut layout = ParamLayout::default();
        let c = config.architecture.output_channels();
        let net = if config.architecture.is_fno() {
            Net::Fno(FnoNet::declare(
                &mut layout,
                c,
                config.fno_width,
                config.fno_modes,
                config.fno_layers,
                config.spectral_mixing,
            ))
        } else {
            Net::DeepOnet(DeepOnetNet::declare(
                &mut layout,
                c,
                config.basis,
                config.branch_width,
                config.branch_layers,
                config.trunk_width,
                config.trunk_layers,
            ))
        };
        Ok((net, layout))
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    pub fn output_channels(&self) -> usize {
        self.config.architecture.output_channels()
    }

    fn forward<R: rand::Rng + ?Sized>(
        &self,
        inputs: &[f64],
        arclengths: &[f64],
        batch: usize,
        nodes: usize,
        dropout: Option<&mut DropoutCtx<'_, R>>,
    ) -> Result<(Vec<f64>, Tape), ModelError> {
        let (mut out, tape) = match &self.net {
            Net::DeepOnet(net) => {
                let (out, tape) = net.forward(&self.params, inputs, arclengths, batch, nodes, dropout);
                (out, Tape::DeepOnet(tape))
            }
            Net::Fno(net) => {
                let (out, tape) = net.forward(&self.params, inputs, arclengths, batch, nodes, dropout)?;
                (out, Tape::Fno(tape))
            }
        };
        if self.architecture().is_pose() {
            offset_pose_frames(&mut out);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { block: "output".into() });
        }
        Ok((out, tape))
    }

    /// Network output (`batch × nodes × c`) without dropout.
    pub fn forward_raw(&self, batch: &Batch) -> Result<Vec<f64>, ModelError> {
        batch.check(false)?;
        let (out, _) =
            self.forward::<rand_chacha::ChaCha8Rng>(&batch.inputs, &batch.s_inputs, batch.len(), batch.nodes, None)?;
        Ok(out)
    }

    /// Raw output for one normalized design on a grid of model-facing
    /// arclength inputs, `n × c`.
    pub fn evaluate(&self, d_norm: &[f64], s_grid: &[f64]) -> Result<DenseArray, ModelError> {
        if d_norm.len() != DESIGN_DIM || s_grid.is_empty() {
            return Err(ModelError::Shape(format!(
                "design of length {} on {} nodes",
                d_norm.len(),
                s_grid.len()
            )));
        }
        let (out, _) = self.forward::<rand_chacha::ChaCha8Rng>(d_norm, s_grid, 1, s_grid.len(), None)?;
        DenseArray::new(vec![s_grid.len(), self.output_channels()], out)
    }

    /// Predicted tendon positions, `batch × nodes × 12`. Pose outputs go
    /// through the strict Gram–Schmidt frame.
    pub fn predict_tendons(&self, batch: &Batch) -> Result<Vec<f64>, ModelError> {
        let raw = self.forward_raw(batch)?;
        if !self.architecture().is_pose() {
            return Ok(raw);
        }
        let n = batch.nodes;
        let mut out = Vec::with_capacity(batch.len() * n * TENDON_CHANNELS);
        for (b, design) in batch.designs.iter().enumerate() {
            let rows = &raw[b * n * POSE_CHANNELS..(b + 1) * n * POSE_CHANNELS];
            out.extend(pose_rows_to_tendons(
                rows,
                design,
                &batch.arclengths[b * n..(b + 1) * n],
            )?);
        }
        Ok(out)
    }

    /// Branch coefficients of a DeepONet for one normalized design.
    pub fn branch_output(&self, d_norm: &[f64]) -> Option<Vec<f64>> {
        match &self.net {
            Net::DeepOnet(net) => Some(net.branch_output(&self.params, d_norm, 1)),
            Net::Fno(_) => None,
        }
    }

    /// Mean training loss over the batch. With `dropout = Some(rng)` and a
    /// positive configured rate, masks are drawn from `rng`. Gradients are
    /// added to `grad` when given.
    pub fn loss_and_grad<R: rand::Rng + ?Sized>(
        &self,
        batch: &Batch,
        dropout: Option<&mut R>,
        grad: Option<&mut [f64]>,
    ) -> Result<BatchLoss, ModelError> {
        batch.check(true)?;
        let (b_count, n) = (batch.len(), batch.nodes);
        let mut ctx = dropout.map(|rng| DropoutCtx {
            rate: self.config.dropout,
            rng,
        });
        let (out, tape) = self.forward(&batch.inputs, &batch.s_inputs, b_count, n, ctx.as_mut())?;
        let c = self.output_channels();
        let weight = 1.0 / b_count as f64;
        let mut d_out = vec![0.0; out.len()];
        let mut loss = 0.0;
        let mut relative = 0.0;
        for b in 0..b_count {
            let target = &batch.targets[b * n * TENDON_CHANNELS..(b + 1) * n * TENDON_CHANNELS];
            let pred = &out[b * n * c..(b + 1) * n * c];
            let d_pred = &mut d_out[b * n * c..(b + 1) * n * c];
            let design_loss = if self.architecture().is_pose() {
                let offsets = offsets_on_grid(&batch.designs[b], &batch.arclengths[b * n..(b + 1) * n])?;
                pose_loss_grad(pred, target, &offsets, weight, d_pred)
            } else {
                tendon_loss_grad(pred, target, weight, d_pred)
            };
            loss += design_loss;
            let norm: f64 = target.iter().map(|v| v * v).sum::<f64>();
            relative += (design_loss * n as f64 / norm).sqrt();
        }
        if let Some(grad) = grad {
            if grad.len() != self.params.len() {
                return Err(ModelError::Shape(format!(
                    "gradient buffer of {} for {} parameters",
                    grad.len(),
                    self.params.len()
                )));
            }
            match (&self.net, &tape) {
                (Net::DeepOnet(net), Tape::DeepOnet(t)) => net.backward(&self.params, t, &d_out, grad),
                (Net::Fno(net), Tape::Fno(t)) => net.backward(&self.params, t, &d_out, grad),
                _ => unreachable!("tape matches network"),
            }
            if let Some(block) = self.layout.first_non_finite(grad) {
                return Err(ModelError::NonFinite {
                    block: format!("gradient of {block}"),
                });
            }
        }
        Ok(BatchLoss {
            loss: loss * weight,
            relative_l2: relative * weight,
            count: b_count,
        })
    }

    /// Mean training loss without dropout or gradients.
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64, ModelError> {
        Ok(self.loss_and_grad::<rand_chacha::ChaCha8Rng>(batch, None, None)?.loss)
    }
}

fn offset_pose_frames(out: &mut [f64]) {
    for row in out.chunks_exact_mut(POSE_CHANNELS) {
        row[3] += 1.0;
        row[7] += 1.0;
    }
}

fn with_pose_offset(model: &Model, mut out: DenseArray) -> DenseArray {
    if model.architecture().is_pose() {
        offset_pose_frames(&mut out.values);
    }
    out
}

/// DeepONet output for one design, evaluated as explicit per-channel inner
/// products of the branch and trunk outputs.
pub fn deeponet_forward(model: &Model, d_norm: &[f64], s_grid: &[f64]) -> Result<DenseArray, ModelError> {
    match &model.net {
        Net::DeepOnet(net) => Ok(with_pose_offset(model, net.reference(&model.params, d_norm, s_grid)?)),
        Net::Fno(_) => Err(ModelError::Config(format!(
            "{} is not a DeepONet",
            model.architecture()
        ))),
    }
}

/// FNO output for one design.
pub fn fno_forward(model: &Model, d_norm: &[f64], s_grid: &[f64]) -> Result<DenseArray, ModelError> {
    match &model.net {
        Net::Fno(net) => Ok(with_pose_offset(model, net.evaluate(&model.params, d_norm, s_grid)?)),
        Net::DeepOnet(_) => Err(ModelError::Config(format!("{} is not an FNO", model.architecture()))),
    }
}
