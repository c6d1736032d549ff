use rand::Rng;

use super::layers::{attention_hidden_width, channel_attention, gate_branch, split_conv, AttentionVars, BranchVars, GateVars};
use super::{ModelConfig, ModelInput};
use crate::error::{Error, Result};
use crate::tensor::{xavier_normal, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct AttentionIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl AttentionIds {
    fn create<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, channels: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        let h = attention_hidden_width(channels, reduction);
        Ok(AttentionIds {
            w1: params.add(format!("{prefix}.w1"), xavier_normal(&[h, channels], channels, h, rng))?,
            b1: params.add(format!("{prefix}.b1"), Tensor::zeros(&[h]))?,
            w2: params.add(format!("{prefix}.w2"), xavier_normal(&[channels, h], h, channels, rng))?,
            b2: params.add(format!("{prefix}.b2"), Tensor::zeros(&[channels]))?,
        })
    }

    fn bind(&self, params: &ParamSet, tape: &mut Tape) -> AttentionVars {
        AttentionVars {
            w1: params.bind(tape, self.w1),
            b1: params.bind(tape, self.b1),
            w2: params.bind(tape, self.w2),
            b2: params.bind(tape, self.b2),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BranchIds {
    weight: ParamId,
    bias: ParamId,
    attention: Option<AttentionIds>,
}

impl BranchIds {
    fn bind(&self, params: &ParamSet, tape: &mut Tape) -> BranchVars {
        BranchVars {
            weight: params.bind(tape, self.weight),
            bias: params.bind(tape, self.bias),
            attention: self.attention.map(|a| a.bind(params, tape)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct GateIds {
    inflow: Option<(ParamId, ParamId)>,
    outflow: Option<(ParamId, ParamId)>,
    w: ParamId,
}

/// The channel-wise attentive split CNN with inflow/outflow gate.
#[derive(Clone, Debug)]
pub struct CasCnn {
    config: ModelConfig,
    pub params: ParamSet,
    input_attention: Option<AttentionIds>,
    layer1: Vec<BranchIds>,
    layer2: Vec<BranchIds>,
    gate: Option<GateIds>,
    head: (ParamId, ParamId),
}

fn split_layer<R: Rng + ?Sized>(
    params: &mut ParamSet,
    layer: &str,
    c_in: usize,
    c_out: usize,
    kernels: &[usize],
    attention_reduction: Option<usize>,
    rng: &mut R,
) -> Result<Vec<BranchIds>> {
    kernels
        .iter()
        .map(|&k| {
            let prefix = format!("{layer}.k{k}");
            let weight = params.add(
                format!("{prefix}.weight"),
                xavier_normal(&[c_out, c_in, k, k], c_in * k * k, c_out * k * k, rng),
            )?;
            let bias = params.add(format!("{prefix}.bias"), Tensor::zeros(&[c_out]))?;
            let attention = attention_reduction
                .map(|r| AttentionIds::create(params, &format!("{prefix}.att"), c_out, r, rng))
                .transpose()?;
            Ok(BranchIds { weight, bias, attention })
        })
        .collect()
}

impl CasCnn {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ab = config.ablations;
        if config.filters_layer2 != 1 && !(ab.no_inflow && ab.no_outflow) {
            return Err(Error::Config(format!(
                "row fusion with the gate needs a single-channel trunk, layer 2 has {} filters",
                config.filters_layer2
            )));
        }
        let attend = !ab.no_channel_attention;
        let kernels = config.effective_kernels();
        let mut params = ParamSet::new();

        let input_attention = attend
            .then(|| AttentionIds::create(&mut params, "input_att", config.x, config.reduction, rng))
            .transpose()?;
        let layer1 = split_layer(
            &mut params,
            "l1",
            config.x,
            config.filters_layer1,
            &kernels,
            attend.then_some(config.reduction),
            rng,
        )?;
        let layer2 = split_layer(
            &mut params,
            "l2",
            config.filters_layer1,
            config.filters_layer2,
            &kernels,
            (attend && config.ca_after_layer2).then_some(config.reduction),
            rng,
        )?;

        let gate = if ab.no_inflow && ab.no_outflow {
            None
        } else {
            let y = config.y;
            let mut flow_conv = |name: &str, rng: &mut R| -> Result<(ParamId, ParamId)> {
                Ok((
                    params.add(format!("gate.{name}.weight"), xavier_normal(&[1, y], y, 1, rng))?,
                    params.add(format!("gate.{name}.bias"), Tensor::zeros(&[1]))?,
                ))
            };
            let inflow = (!ab.no_inflow).then(|| flow_conv("inflow", rng)).transpose()?;
            let outflow = (!ab.no_outflow).then(|| flow_conv("outflow", rng)).transpose()?;
            let w = params.add("gate.w", Tensor::full(&[config.n], 1.0))?;
            Some(GateIds { inflow, outflow, w })
        };

        let trunk_channels = config.filters_layer2;
        let head = (
            params.add(
                "head.weight",
                xavier_normal(&[1, trunk_channels], trunk_channels, 1, rng),
            )?,
            params.add("head.bias", Tensor::zeros(&[1]))?,
        );
        Ok(CasCnn {
            config,
            params,
            input_attention,
            layer1,
            layer2,
            gate,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, input: &ModelInput<'_>) -> Result<()> {
        let (n, x, y) = (self.config.n, self.config.x, self.config.y);
        for (what, t, want) in [
            ("history", input.history, vec![x, n, n]),
            ("inflow", input.inflow, vec![y, n]),
            ("outflow", input.outflow, vec![y, n]),
        ] {
            if t.shape() != want.as_slice() {
                let axis = t.shape().iter().zip(&want).position(|(a, b)| a != b).unwrap_or(0);
                return Err(Error::dim(
                    "cas_cnn forward",
                    format!("{what} axis {axis}"),
                    want.get(axis).copied().unwrap_or(0),
                    t.shape().get(axis).copied().unwrap_or(0),
                ));
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, input: ModelInput<'_>) -> Result<Var> {
        self.check_input(&input)?;
        let n = self.config.n;
        let p = &self.params;
        let mut h = tape.leaf(input.history.clone());
        if let Some(att) = &self.input_attention {
            let net = att.bind(p, tape);
            h = channel_attention(tape, h, &net)?.0;
        }
        let l1: Vec<BranchVars> = self.layer1.iter().map(|b| b.bind(p, tape)).collect();
        let o1 = split_conv(tape, h, &l1)?;
        let o1 = tape.relu(o1);
        let l2: Vec<BranchVars> = self.layer2.iter().map(|b| b.bind(p, tape)).collect();
        let trunk = split_conv(tape, o1, &l2)?;

        let fused = match &self.gate {
            Some(g) => {
                let vars = GateVars {
                    inflow: g.inflow.map(|(w, b)| (p.bind(tape, w), p.bind(tape, b))),
                    outflow: g.outflow.map(|(w, b)| (p.bind(tape, w), p.bind(tape, b))),
                    w: p.bind(tape, g.w),
                };
                let fin = tape.leaf(input.inflow.clone());
                let fout = tape.leaf(input.outflow.clone());
                let o_io = gate_branch(tape, fin, fout, &vars, &self.config.ablations)?;
                let plane = tape.reshape(trunk, &[n, n])?;
                let fused = tape.broadcast_rows(plane, o_io)?;
                tape.reshape(fused, &[1, n, n])?
            }
            None => trunk,
        };
        let hw = p.bind(tape, self.head.0);
        let hb = p.bind(tape, self.head.1);
        let out = tape.conv1x1(fused, hw, hb)?;
        tape.reshape(out, &[n, n])
    }
}
