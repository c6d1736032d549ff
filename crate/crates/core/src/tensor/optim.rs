use serde::{Deserialize, Serialize};

use super::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Applies one update from the grad buffers of every parameter.
pub trait Optimizer {
    fn step(&mut self, params: &mut ParamSet);
}

#[derive(Clone, Copy, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamSet) {
        for p in params.iter_mut() {
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let values = p.tensor.data_mut();
            for i in 0..values.len() {
                let g = p.grad[i];
                let m = self.beta1 * p.first_moment[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * p.second_moment[i] + (1.0 - self.beta2) * g * g;
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                values[i] -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Plain gradient descent, kept for optimizer-sensitivity runs.
#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamSet) {
        for p in params.iter_mut() {
            p.step += 1;
            for (v, g) in p.tensor.data_mut().iter_mut().zip(&p.grad) {
                *v -= self.lr * g;
            }
        }
    }
}
