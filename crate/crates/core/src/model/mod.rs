//! CAS-CNN: input channel attention, two split-convolution layers with
//! per-branch channel attention, an inflow/outflow gate fused by rows, and a
//! 1×1 output head. Also the plain three-layer CNN baseline.

mod baseline;
mod cascnn;
mod checkpoint;
mod layers;

pub use baseline::{BaselineCnn, BASELINE_WIDTHS};
pub use cascnn::CasCnn;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry, CheckpointManifest};
pub use layers::{attention_hidden_width, channel_attention, gate_branch, split_conv, AttentionVars, BranchVars, GateVars};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::afc::Sample;
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Replace the split convolution by a single 3×3 convolution.
    pub no_split: bool,
    /// Drop both the input and the post-split channel attention.
    pub no_channel_attention: bool,
    pub no_inflow: bool,
    pub no_outflow: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Station count.
    pub n: usize,
    /// History days.
    pub x: usize,
    /// Flow time steps.
    pub y: usize,
    pub kernels: Vec<usize>,
    pub filters_layer1: usize,
    pub filters_layer2: usize,
    /// Attention reduction factor.
    pub reduction: usize,
    pub ablations: Ablations,
    /// Also attend the output of the second split layer.
    pub ca_after_layer2: bool,
}

impl ModelConfig {
    pub fn new(n: usize) -> Self {
        ModelConfig {
            n,
            x: 5,
            y: 5,
            kernels: vec![3, 5],
            filters_layer1: 16,
            filters_layer2: 1,
            reduction: 2,
            ablations: Ablations::default(),
            ca_after_layer2: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("n must be at least 1".to_string());
        }
        if self.x == 0 || self.y == 0 {
            problems.push("x and y must be at least 1".to_string());
        }
        if self.kernels.is_empty() {
            problems.push("kernels must be nonempty".to_string());
        }
        if let Some(k) = self.kernels.iter().find(|&&k| k % 2 == 0) {
            problems.push(format!("kernel size {k} is not odd"));
        }
        let mut sorted = self.kernels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.kernels.len() {
            problems.push("kernel sizes must be distinct".to_string());
        }
        if self.filters_layer1 == 0 || self.filters_layer2 == 0 {
            problems.push("filter counts must be at least 1".to_string());
        }
        if self.reduction == 0 {
            problems.push("reduction must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Kernel sizes actually used by the split layers.
    pub fn effective_kernels(&self) -> Vec<usize> {
        if self.ablations.no_split {
            vec![3]
        } else {
            self.kernels.clone()
        }
    }
}

/// Model inputs for one (day, interval): normalized x×n×n history and y×n
/// inflow/outflow windows.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub history: &'a Tensor,
    pub inflow: &'a Tensor,
    pub outflow: &'a Tensor,
}

impl<'a> From<&'a Sample> for ModelInput<'a> {
    fn from(s: &'a Sample) -> Self {
        ModelInput {
            history: &s.history,
            inflow: &s.inflow,
            outflow: &s.outflow,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CasCnn,
    Cnn2d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub config: ModelConfig,
}

#[derive(Clone, Debug)]
pub enum Model {
    CasCnn(CasCnn),
    Cnn2d(BaselineCnn),
}

impl Model {
    pub fn build<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec.kind {
            ModelKind::CasCnn => Model::CasCnn(CasCnn::new(spec.config.clone(), rng)?),
            ModelKind::Cnn2d => Model::Cnn2d(BaselineCnn::new(spec.config.clone(), rng)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::CasCnn(m) => ModelSpec {
                kind: ModelKind::CasCnn,
                config: m.config().clone(),
            },
            Model::Cnn2d(m) => ModelSpec {
                kind: ModelKind::Cnn2d,
                config: m.config().clone(),
            },
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::CasCnn(m) => m.config(),
            Model::Cnn2d(m) => m.config(),
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::CasCnn(m) => &m.params,
            Model::Cnn2d(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::CasCnn(m) => &mut m.params,
            Model::Cnn2d(m) => &mut m.params,
        }
    }

    /// Records the forward pass on `tape`; the result is the n×n normalized
    /// prediction.
    pub fn forward(&self, tape: &mut Tape, input: ModelInput<'_>) -> Result<Var> {
        match self {
            Model::CasCnn(m) => m.forward(tape, input),
            Model::Cnn2d(m) => m.forward(tape, input),
        }
    }

    /// Forward pass without gradient bookkeeping beyond a scratch tape.
    pub fn predict(&self, input: ModelInput<'_>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, input)?;
        Ok(tape.value(out).clone())
    }
}
