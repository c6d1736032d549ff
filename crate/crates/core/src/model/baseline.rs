use rand::Rng;

use super::{ModelConfig, ModelInput};
use crate::error::{Error, Result};
use crate::tensor::{xavier_normal, ParamId, ParamSet, Tape, Tensor, Var};

/// Widths of the baseline's three convolution layers.
pub const BASELINE_WIDTHS: [usize; 3] = [8, 16, 1];
const BASELINE_KERNEL: usize = 5;

/// Plain three-layer same-padded CNN over the history stack: 5×5 kernels,
/// ReLU after the first two layers, linear output. Flow inputs are ignored.
#[derive(Clone, Debug)]
pub struct BaselineCnn {
    config: ModelConfig,
    pub params: ParamSet,
    layers: Vec<(ParamId, ParamId)>,
}

impl BaselineCnn {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        let k = BASELINE_KERNEL;
        let mut c_in = config.x;
        for (i, &c_out) in BASELINE_WIDTHS.iter().enumerate() {
            let w = params.add(
                format!("cnn.l{}.weight", i + 1),
                xavier_normal(&[c_out, c_in, k, k], c_in * k * k, c_out * k * k, rng),
            )?;
            let b = params.add(format!("cnn.l{}.bias", i + 1), Tensor::zeros(&[c_out]))?;
            layers.push((w, b));
            c_in = c_out;
        }
        Ok(BaselineCnn { config, params, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|(w, _)| self.params.get(*w).tensor.shape()[0]).collect()
    }

    pub fn forward(&self, tape: &mut Tape, input: ModelInput<'_>) -> Result<Var> {
        let (n, x) = (self.config.n, self.config.x);
        if input.history.shape() != [x, n, n] {
            return Err(Error::dim("cnn2d forward", "history", x * n * n, input.history.len()));
        }
        let mut h = tape.leaf(input.history.clone());
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = self.params.bind(tape, w);
            let bv = self.params.bind(tape, b);
            h = tape.conv2d_same(h, wv, bv)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        tape.reshape(h, &[n, n])
    }
}
