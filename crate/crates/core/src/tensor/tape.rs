//! Reverse-mode tape over a fixed operator set.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse creation order, which is a valid topological
//! order because operands always precede their results.

use super::{ParamId, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d { input: Var, weight: Var, bias: Var },
    Conv1x1 { input: Var, weight: Var, bias: Var },
    GlobalAvgPool(Var),
    Dense { input: Var, weight: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    Mul(Var, Var),
    Add(Var, Var),
    ScaleChannels { x: Var, scale: Var },
    BroadcastRows { m: Var, v: Var },
    Reshape(Var),
    Sum(Var),
    MaskedMse { pred: Var, target: Vec<f64>, mask: Vec<bool>, kept: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn first_mismatch(a: &[usize], b: &[usize]) -> (String, usize, usize) {
    if a.len() != b.len() {
        return ("rank".to_string(), a.len(), b.len());
    }
    let axis = a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(0);
    (format!("axis {axis}"), a[axis], b[axis])
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        return Ok(());
    }
    let (axis, expected, actual) = first_mismatch(a.shape(), b.shape());
    Err(Error::dim(op, axis, expected, actual))
}

fn expect_rank(op: &'static str, what: &str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(op, format!("{what} rank"), rank, t.rank()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    dst.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of the last `backward` calls, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(value, Op::Param(id))
    }

    /// Gradients of every parameter node reached by `backward`.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.nodes.iter().zip(&self.grads).filter_map(|(node, g)| match (&node.op, g) {
            (Op::Param(id), Some(g)) => Some((*id, g.as_slice())),
            _ => None,
        })
    }

    /// Same-padded 2-D convolution: `input` is C_in×H×W, `weight` is
    /// C_out×C_in×k×k with odd k, `bias` has C_out entries.
    pub fn conv2d_same(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "conv2d_same";
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        expect_rank(OP, "input", x, 3)?;
        expect_rank(OP, "weight", w, 4)?;
        expect_rank(OP, "bias", b, 1)?;
        let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, k) = (w.shape()[0], w.shape()[2]);
        if w.shape()[1] != c_in {
            return Err(Error::dim(OP, "weight in_channels", c_in, w.shape()[1]));
        }
        if w.shape()[3] != k {
            return Err(Error::dim(OP, "kernel width", k, w.shape()[3]));
        }
        if k % 2 == 0 {
            return Err(Error::Usage(format!("{OP}: kernel size must be odd, got {k}")));
        }
        if b.len() != c_out {
            return Err(Error::dim(OP, "bias out_channels", c_out, b.len()));
        }
        let out = conv2d_forward(x.data(), w.data(), b.data(), c_in, c_out, h, wd, k);
        let value = Tensor::new(vec![c_out, h, wd], out)?;
        Ok(self.push(value, Op::Conv2d { input, weight, bias }))
    }

    /// Per-position linear map across channels: `input` C_in×H×W, `weight`
    /// C_out×C_in, `bias` C_out.
    pub fn conv1x1(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "conv1x1";
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        expect_rank(OP, "input", x, 3)?;
        expect_rank(OP, "weight", w, 2)?;
        expect_rank(OP, "bias", b, 1)?;
        let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let c_out = w.shape()[0];
        if w.shape()[1] != c_in {
            return Err(Error::dim(OP, "weight in_channels", c_in, w.shape()[1]));
        }
        if b.len() != c_out {
            return Err(Error::dim(OP, "bias out_channels", c_out, b.len()));
        }
        let hw = h * wd;
        let mut out = vec![0.0; c_out * hw];
        for co in 0..c_out {
            let plane = &mut out[co * hw..(co + 1) * hw];
            plane.iter_mut().for_each(|o| *o = b.data()[co]);
            for m in 0..c_in {
                let wv = w.data()[co * c_in + m];
                let src = &x.data()[m * hw..(m + 1) * hw];
                for (o, &s) in plane.iter_mut().zip(src) {
                    *o += wv * s;
                }
            }
        }
        let value = Tensor::new(vec![c_out, h, wd], out)?;
        Ok(self.push(value, Op::Conv1x1 { input, weight, bias }))
    }

    /// Mean over the spatial axes of a C×H×W tensor.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        expect_rank("global_avg_pool", "input", x, 3)?;
        let c = x.shape()[0];
        let hw = x.len() / c;
        let out = x.data().chunks(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect();
        Ok(self.push(Tensor::from_vec(out), Op::GlobalAvgPool(input)))
    }

    /// Affine map `weight · input + bias` on vectors.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "dense";
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        expect_rank(OP, "input", x, 1)?;
        expect_rank(OP, "weight", w, 2)?;
        expect_rank(OP, "bias", b, 1)?;
        let (n_out, n_in) = (w.shape()[0], w.shape()[1]);
        if x.len() != n_in {
            return Err(Error::dim(OP, "input features", n_in, x.len()));
        }
        if b.len() != n_out {
            return Err(Error::dim(OP, "bias features", n_out, b.len()));
        }
        let out = (0..n_out)
            .map(|o| {
                let row = &w.data()[o * n_in..(o + 1) * n_in];
                row.iter().zip(x.data()).fold(b.data()[o], |acc, (a, v)| acc + a * v)
            })
            .collect();
        Ok(self.push(Tensor::from_vec(out), Op::Dense { input, weight, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        self.push(value, Op::Sigmoid(input))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("elementwise_mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("elementwise_add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Multiplies channel `c` of a C×… tensor by `scale[c]`.
    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Result<Var> {
        const OP: &str = "scale_channels";
        let (t, s) = (self.value(x), self.value(scale));
        expect_rank(OP, "scale", s, 1)?;
        let c = t.shape()[0];
        if s.len() != c {
            return Err(Error::dim(OP, "channels", c, s.len()));
        }
        let per = t.len() / c;
        let data = t
            .data()
            .chunks(per)
            .zip(s.data())
            .flat_map(|(ch, &f)| ch.iter().map(move |v| v * f))
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ScaleChannels { x, scale }))
    }

    /// `out[i, j] = m[i, j] + v[i]` for an H×W matrix and an H vector.
    pub fn broadcast_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        const OP: &str = "broadcast_rows";
        let (mat, vec) = (self.value(m), self.value(v));
        expect_rank(OP, "matrix", mat, 2)?;
        expect_rank(OP, "vector", vec, 1)?;
        let (h, w) = (mat.shape()[0], mat.shape()[1]);
        if vec.len() != h {
            return Err(Error::dim(OP, "rows", h, vec.len()));
        }
        let data = mat
            .data()
            .chunks(w)
            .zip(vec.data())
            .flat_map(|(row, &add)| row.iter().map(move |x| x + add))
            .collect();
        let value = Tensor::new(vec![h, w], data)?;
        Ok(self.push(value, Op::BroadcastRows { m, v }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean squared error over the cells where `mask` is true. Cells outside
    /// the mask are never read, so their targets cannot influence either the
    /// loss or its gradient.
    pub fn masked_mse(&mut self, pred: Var, target: &Tensor, mask: &[bool]) -> Result<Var> {
        const OP: &str = "masked_mse";
        let p = self.value(pred);
        same_shape(OP, p, target)?;
        if mask.len() != p.len() {
            return Err(Error::dim(OP, "mask", p.len(), mask.len()));
        }
        let kept = mask.iter().filter(|&&m| m).count();
        if kept == 0 {
            return Err(Error::DegenerateMask);
        }
        let mut acc = 0.0;
        for ((&pv, &tv), &m) in p.data().iter().zip(target.data()).zip(mask) {
            if m {
                let d = tv - pv;
                acc += d * d;
            }
        }
        let value = Tensor::scalar(acc / kept as f64);
        Ok(self.push(
            value,
            Op::MaskedMse {
                pred,
                target: target.data().to_vec(),
                mask: mask.to_vec(),
                kept,
            },
        ))
    }

    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let mask = vec![true; target.len()];
        self.masked_mse(pred, target, &mask)
    }

    /// Accumulates d`loss`/d(node) into every node reachable from `loss`.
    /// Calling it again without [`Tape::zero_grads`] adds the gradients again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(idx, &g, &mut adj);
            let dst = add_into(&mut self.grads[idx], g.len());
            for (d, v) in dst.iter_mut().zip(&g) {
                *d += v;
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (c_out, k) = (w.shape()[0], w.shape()[2]);
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                let mut gb = vec![0.0; c_out];
                conv2d_backward(
                    x.data(), w.data(), g, &mut gx, &mut gw, &mut gb, c_in, c_out, h, wd, k,
                );
                accumulate(adj, *input, &gx);
                accumulate(adj, *weight, &gw);
                accumulate(adj, *bias, &gb);
            }
            Op::Conv1x1 { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let c_in = x.shape()[0];
                let c_out = w.shape()[0];
                let hw = x.len() / c_in;
                let mut gx = vec![0.0; x.len()];
                let mut gw = vec![0.0; w.len()];
                let mut gb = vec![0.0; c_out];
                for co in 0..c_out {
                    let go = &g[co * hw..(co + 1) * hw];
                    gb[co] = go.iter().sum();
                    for m in 0..c_in {
                        let xs = &x.data()[m * hw..(m + 1) * hw];
                        gw[co * c_in + m] = go.iter().zip(xs).map(|(a, b)| a * b).sum();
                        let wv = w.data()[co * c_in + m];
                        for (d, &gv) in gx[m * hw..(m + 1) * hw].iter_mut().zip(go) {
                            *d += wv * gv;
                        }
                    }
                }
                accumulate(adj, *input, &gx);
                accumulate(adj, *weight, &gw);
                accumulate(adj, *bias, &gb);
            }
            Op::GlobalAvgPool(input) => {
                let x = self.value(*input);
                let c = x.shape()[0];
                let hw = x.len() / c;
                let gx: Vec<f64> = g.iter().flat_map(|&gv| std::iter::repeat_n(gv / hw as f64, hw)).collect();
                accumulate(adj, *input, &gx);
            }
            Op::Dense { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let n_in = x.len();
                let mut gx = vec![0.0; n_in];
                let mut gw = vec![0.0; w.len()];
                for (o, &gv) in g.iter().enumerate() {
                    let row = &w.data()[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        gw[o * n_in + i] = gv * x.data()[i];
                        gx[i] += row[i] * gv;
                    }
                }
                accumulate(adj, *input, &gx);
                accumulate(adj, *weight, &gw);
                accumulate(adj, *bias, g);
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let gx: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(adj, *input, &gx);
            }
            Op::Sigmoid(input) => {
                let y = &node.value;
                let gx: Vec<f64> = y.data().iter().zip(g).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                accumulate(adj, *input, &gx);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let ga: Vec<f64> = y.data().iter().zip(g).map(|(v, gv)| v * gv).collect();
                let gb: Vec<f64> = x.data().iter().zip(g).map(|(v, gv)| v * gv).collect();
                accumulate(adj, *a, &ga);
                accumulate(adj, *b, &gb);
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g);
                accumulate(adj, *b, g);
            }
            Op::ScaleChannels { x, scale } => {
                let t = self.value(*x);
                let s = self.value(*scale);
                let per = t.len() / s.len();
                let mut gx = vec![0.0; t.len()];
                let mut gs = vec![0.0; s.len()];
                for c in 0..s.len() {
                    let range = c * per..(c + 1) * per;
                    let f = s.data()[c];
                    let mut acc = 0.0;
                    for ((d, &gv), &tv) in gx[range.clone()].iter_mut().zip(&g[range.clone()]).zip(&t.data()[range]) {
                        *d = gv * f;
                        acc += gv * tv;
                    }
                    gs[c] = acc;
                }
                accumulate(adj, *x, &gx);
                accumulate(adj, *scale, &gs);
            }
            Op::BroadcastRows { m, v } => {
                let w = node.value.shape()[1];
                let gv: Vec<f64> = g.chunks(w).map(|row| row.iter().sum()).collect();
                accumulate(adj, *m, g);
                accumulate(adj, *v, &gv);
            }
            Op::Reshape(x) => accumulate(adj, *x, g),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                accumulate(adj, *x, &vec![g[0]; n]);
            }
            Op::MaskedMse { pred, target, mask, kept } => {
                let p = self.value(*pred);
                let scale = 2.0 * g[0] / *kept as f64;
                let gp: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(target)
                    .zip(mask)
                    .map(|((&pv, &tv), &m)| if m { scale * (pv - tv) } else { 0.0 })
                    .collect();
                accumulate(adj, *pred, &gp);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    let dst = add_into(&mut adj[v.0], g.len());
    for (d, x) in dst.iter_mut().zip(g) {
        *d += x;
    }
}

/// Valid output rows/cols for a kernel offset `d` on an axis of length `n`:
/// positions `o` with `0 <= o + d < n`.
fn valid_range(d: isize, n: usize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    lo..hi.max(lo)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], c_in: usize, c_out: usize, h: usize, wd: usize, k: usize) -> Vec<f64> {
    let hw = h * wd;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; c_out * hw];
    for co in 0..c_out {
        let plane = &mut out[co * hw..(co + 1) * hw];
        plane.iter_mut().for_each(|o| *o = b[co]);
        for m in 0..c_in {
            let src = &x[m * hw..(m + 1) * hw];
            for p in 0..k {
                let dx = p as isize - pad;
                let rows = valid_range(dx, h);
                for q in 0..k {
                    let wv = w[((co * c_in + m) * k + p) * k + q];
                    let dy = q as isize - pad;
                    let cols = valid_range(dy, wd);
                    for r in rows.clone() {
                        let sr = (r as isize + dx) as usize;
                        let orow = &mut plane[r * wd..(r + 1) * wd];
                        let srow = &src[sr * wd..(sr + 1) * wd];
                        for c in cols.clone() {
                            orow[c] += wv * srow[(c as isize + dy) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    wd: usize,
    k: usize,
) {
    let hw = h * wd;
    let pad = (k / 2) as isize;
    for co in 0..c_out {
        let go = &g[co * hw..(co + 1) * hw];
        gb[co] = go.iter().sum();
        for m in 0..c_in {
            let src = &x[m * hw..(m + 1) * hw];
            let dsrc = &mut gx[m * hw..(m + 1) * hw];
            for p in 0..k {
                let dx = p as isize - pad;
                let rows = valid_range(dx, h);
                for q in 0..k {
                    let widx = ((co * c_in + m) * k + p) * k + q;
                    let wv = w[widx];
                    let dy = q as isize - pad;
                    let cols = valid_range(dy, wd);
                    let mut acc = 0.0;
                    for r in rows.clone() {
                        let sr = (r as isize + dx) as usize;
                        let grow = &go[r * wd..(r + 1) * wd];
                        for c in cols.clone() {
                            let sc = (c as isize + dy) as usize;
                            acc += grow[c] * src[sr * wd + sc];
                            dsrc[sr * wd + sc] += wv * grow[c];
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
}
