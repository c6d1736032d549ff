//! Central finite-difference oracle for tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Norm-wise relative error `‖a − b‖ / (‖a‖ + ‖b‖)`. Falls back to the
/// absolute error when both vectors are numerically zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb < 1e-10 {
        diff
    } else {
        diff / (na + nb)
    }
}

/// Gradient of the scalar `f` with respect to every element of every input,
/// by central differences with step `h`.
pub fn finite_difference_grads<F>(inputs: &[Tensor], h: f64, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].len()];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = inputs[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = f(&work)?;
            work[t].data_mut()[i] = orig - h;
            let minus = f(&work)?;
            work[t].data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Compares tape gradients of a scalar-valued graph against finite differences.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-5 }
    }
}

impl GradCheck {
    /// Relative error per input. `build` must produce a scalar from the leaves
    /// it is handed, in the order of `inputs`.
    pub fn run<F>(&self, inputs: &[Tensor], build: F) -> Result<Vec<f64>>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &leaves)?;
        tape.backward(loss)?;
        let analytic: Vec<Vec<f64>> = leaves
            .iter()
            .zip(inputs)
            .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        let numeric = finite_difference_grads(inputs, self.step, |xs| {
            let mut tape = Tape::new();
            let leaves: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &leaves)?;
            Ok(tape.value(out).data()[0])
        })?;
        Ok(analytic.iter().zip(&numeric).map(|(a, n)| relative_error(a, n)).collect())
    }
}
