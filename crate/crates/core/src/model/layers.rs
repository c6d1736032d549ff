use super::Ablations;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Hidden width of the excitation network: `max(1, ⌊C/R⌋)`.
pub fn attention_hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

/// Excitation network weights on the tape: `W1` is h×C, `W2` is C×h.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Squeeze-and-excitation style channel attention on a C×H×W tensor.
/// Returns the rescaled tensor and the attention vector
/// `δ = sigmoid(W2 · relu(W1 · gap(X) + b1) + b2)`.
pub fn channel_attention(tape: &mut Tape, x: Var, net: &AttentionVars) -> Result<(Var, Var)> {
    let pooled = tape.global_avg_pool(x)?;
    let hidden = tape.dense(pooled, net.w1, net.b1)?;
    let hidden = tape.relu(hidden);
    let logits = tape.dense(hidden, net.w2, net.b2)?;
    let delta = tape.sigmoid(logits);
    let scaled = tape.scale_channels(x, delta)?;
    Ok((scaled, delta))
}

/// One kernel branch of a split convolution.
#[derive(Clone, Copy, Debug)]
pub struct BranchVars {
    pub weight: Var,
    pub bias: Var,
    pub attention: Option<AttentionVars>,
}

/// Sum over branches of `conv2d_same`, each branch optionally rescaled by its
/// own channel attention before the sum.
pub fn split_conv(tape: &mut Tape, x: Var, branches: &[BranchVars]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for b in branches {
        let mut y = tape.conv2d_same(x, b.weight, b.bias)?;
        if let Some(net) = &b.attention {
            y = channel_attention(tape, y, net)?.0;
        }
        acc = Some(match acc {
            None => y,
            Some(a) => tape.add(a, y)?,
        });
    }
    acc.ok_or_else(|| Error::Usage("split_conv needs at least one branch".into()))
}

/// Gate weights: 1×y conv weights and 1-element biases per flow, plus the
/// length-n attention vector `w`.
#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub inflow: Option<(Var, Var)>,
    pub outflow: Option<(Var, Var)>,
    pub w: Var,
}

fn flow_projection(tape: &mut Tape, flow: Var, conv: (Var, Var)) -> Result<Var> {
    let shape = tape.value(flow).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::dim("gate_branch", "flow rank", 2, shape.len()));
    }
    let (y, n) = (shape[0], shape[1]);
    let as_image = tape.reshape(flow, &[y, n, 1])?;
    let proj = tape.conv1x1(as_image, conv.0, conv.1)?;
    tape.reshape(proj, &[n])
}

/// Per-station gate output `w ⊙ conv1x1(inflow) ⊙ conv1x1(outflow)`, where each
/// 1×1 convolution maps the y time-step channels to one channel.
pub fn gate_branch(tape: &mut Tape, inflow: Var, outflow: Var, gate: &GateVars, ablations: &Ablations) -> Result<Var> {
    if ablations.no_inflow && ablations.no_outflow {
        return Err(Error::Config(
            "gate branch with neither inflow nor outflow; disable the gate instead".into(),
        ));
    }
    let mut acc = gate.w;
    if !ablations.no_inflow {
        let conv = gate.inflow.ok_or_else(|| Error::Usage("gate is missing inflow weights".into()))?;
        let a_in = flow_projection(tape, inflow, conv)?;
        acc = tape.mul(acc, a_in)?;
    }
    if !ablations.no_outflow {
        let conv = gate.outflow.ok_or_else(|| Error::Usage("gate is missing outflow weights".into()))?;
        let a_out = flow_projection(tape, outflow, conv)?;
        acc = tape.mul(acc, a_out)?;
    }
    Ok(acc)
}
