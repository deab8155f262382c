use std::fmt;

use super::{gemm, BackwardCtx, Tensor, Var};
use crate::error::{contract, Error, Result};

/// A differentiable operation recorded on a tape.
///
/// `forward` runs once, before the op is stored, and may stash whatever the
/// backward rule needs in `self`.
pub trait Operation: fmt::Debug {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// One entry per input; `None` where no gradient is needed or it is zero.
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>>;

    /// Pushes one bit per branch decision of a piecewise-smooth op.
    fn kink_pattern(&self, _inputs: &[&Tensor], _out: &mut Vec<bool>) {}
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `(outer, axis_len, inner)` so that a row-major buffer is `outer × axis_len × inner`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[derive(Debug)]
struct MatMul;

impl Operation for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", a, b));
        }
        a.matmul(b)
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let ga = ctx.needs[0].then(|| {
            let mut out = vec![0.0; m * k];
            gemm(m, n, k, g.data(), false, b.data(), true, &mut out, 0.0);
            Tensor::from_parts(vec![m, k], out)
        });
        let gb = ctx.needs[1].then(|| {
            let mut out = vec![0.0; k * n];
            gemm(k, m, n, a.data(), true, g.data(), false, &mut out, 0.0);
            Tensor::from_parts(vec![k, n], out)
        });
        vec![ga, gb]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Elementwise binary op on equal shapes, or a single-element operand
/// against a tensor.
#[derive(Debug)]
struct Binary {
    kind: BinaryKind,
}

impl Binary {
    fn out_shape(a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
        if a.shape() == b.shape() {
            Ok(a.shape().to_vec())
        } else if b.len() == 1 {
            Ok(a.shape().to_vec())
        } else if a.len() == 1 {
            Ok(b.shape().to_vec())
        } else {
            Err(shape_err("elementwise", a, b))
        }
    }
}

fn at(t: &Tensor, i: usize) -> f64 {
    if t.len() == 1 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

/// Folds a full-size gradient back onto an operand that may have been broadcast.
fn reduce_to(grad: Vec<f64>, target: &Tensor) -> Tensor {
    if target.len() == grad.len() {
        Tensor::from_parts(target.shape().to_vec(), grad)
    } else {
        Tensor::from_parts(target.shape().to_vec(), vec![grad.iter().sum()])
    }
}

impl Operation for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        let shape = Self::out_shape(a, b)?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| {
                let (x, y) = (at(a, i), at(b, i));
                match self.kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        Ok(Tensor::from_parts(shape, data))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
        let ga = ctx.needs[0].then(|| {
            let full: Vec<f64> = match self.kind {
                BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                BinaryKind::Mul => g.iter().enumerate().map(|(i, gi)| gi * at(b, i)).collect(),
            };
            reduce_to(full, a)
        });
        let gb = ctx.needs[1].then(|| {
            let full: Vec<f64> = match self.kind {
                BinaryKind::Add => g.to_vec(),
                BinaryKind::Sub => g.iter().map(|gi| -gi).collect(),
                BinaryKind::Mul => g.iter().enumerate().map(|(i, gi)| gi * at(a, i)).collect(),
            };
            reduce_to(full, b)
        });
        vec![ga, gb]
    }
}

/// `scale · x + shift`.
#[derive(Debug)]
struct Affine {
    scale: f64,
    shift: f64,
}

impl Operation for Affine {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(|x| self.scale * x + self.shift))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        vec![Some(ctx.grad.map(|g| g * self.scale))]
    }
}

/// Adds a bias vector to every row of a matrix (last axis = bias length).
#[derive(Debug)]
struct AddBias;

impl Operation for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (x, b) = (inputs[0], inputs[1]);
        let width = b.len();
        if b.rank() != 1 || x.shape().last() != Some(&width) {
            return Err(shape_err("add_bias", x, b));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(width) {
            for (o, bi) in row.iter_mut().zip(b.data()) {
                *o += bi;
            }
        }
        Ok(out)
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let b = ctx.inputs[1];
        let gx = ctx.needs[0].then(|| ctx.grad.clone());
        let gb = ctx.needs[1].then(|| {
            let mut acc = vec![0.0; b.len()];
            for row in ctx.grad.data().chunks(b.len()) {
                for (a, g) in acc.iter_mut().zip(row) {
                    *a += g;
                }
            }
            Tensor::from_parts(b.shape().to_vec(), acc)
        });
        vec![gx, gb]
    }
}

#[derive(Debug)]
struct Sum {
    mean: bool,
}

impl Operation for Sum {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if x.is_empty() {
            return Err(contract!("reduction over an empty tensor"));
        }
        let s = x.sum();
        Ok(Tensor::scalar(if self.mean { s / x.len() as f64 } else { s }))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let x = ctx.inputs[0];
        let mut g = ctx.grad.data()[0];
        if self.mean {
            g /= x.len() as f64;
        }
        vec![Some(Tensor::full(x.shape().to_vec(), g))]
    }
}

#[derive(Debug)]
struct Concat {
    axis: usize,
}

impl Operation for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let first = inputs
            .first()
            .ok_or_else(|| contract!("concat of zero tensors"))?;
        let rank = first.rank();
        if self.axis >= rank {
            return Err(Error::Axis {
                op: "concat",
                axis: self.axis,
                rank,
            });
        }
        let mut shape = first.shape().to_vec();
        shape[self.axis] = 0;
        for t in inputs {
            let same_rest = t.rank() == rank
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == self.axis || a == b);
            if !same_rest {
                return Err(shape_err("concat", first, t));
            }
            shape[self.axis] += t.shape()[self.axis];
        }
        let (outer, _, inner) = split_at_axis(&shape, self.axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for t in inputs {
                let chunk = t.shape()[self.axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor::from_parts(shape, data))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let (outer, total, inner) = split_at_axis(ctx.output.shape(), self.axis);
        let row = total * inner;
        let mut offset = 0;
        ctx.inputs
            .iter()
            .zip(ctx.needs)
            .map(|(t, &need)| {
                let chunk = t.shape()[self.axis] * inner;
                let start = offset;
                offset += chunk;
                need.then(|| {
                    let mut data = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = o * row + start;
                        data.extend_from_slice(&ctx.grad.data()[base..base + chunk]);
                    }
                    Tensor::from_parts(t.shape().to_vec(), data)
                })
            })
            .collect()
    }
}

#[derive(Debug)]
struct Narrow {
    axis: usize,
    start: usize,
    len: usize,
}

impl Operation for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if self.axis >= x.rank() {
            return Err(Error::Axis {
                op: "narrow",
                axis: self.axis,
                rank: x.rank(),
            });
        }
        if self.start + self.len > x.shape()[self.axis] {
            return Err(contract!(
                "narrow [{}, {}) exceeds axis {} of shape {:?}",
                self.start,
                self.start + self.len,
                self.axis,
                x.shape()
            ));
        }
        let (outer, n, inner) = split_at_axis(x.shape(), self.axis);
        let mut data = Vec::with_capacity(outer * self.len * inner);
        for o in 0..outer {
            let base = (o * n + self.start) * inner;
            data.extend_from_slice(&x.data()[base..base + self.len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[self.axis] = self.len;
        Ok(Tensor::from_parts(shape, data))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let x = ctx.inputs[0];
        let (outer, n, inner) = split_at_axis(x.shape(), self.axis);
        let mut g = Tensor::zeros(x.shape().to_vec());
        let chunk = self.len * inner;
        for o in 0..outer {
            let base = (o * n + self.start) * inner;
            g.data_mut()[base..base + chunk]
                .copy_from_slice(&ctx.grad.data()[o * chunk..(o + 1) * chunk]);
        }
        vec![Some(g)]
    }
}

#[derive(Debug)]
struct Reshape {
    shape: Vec<usize>,
}

impl Operation for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        inputs[0].reshape(self.shape.clone())
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        vec![Some(
            Tensor::from_parts(ctx.inputs[0].shape().to_vec(), ctx.grad.data().to_vec()),
        )]
    }
}

/// Sliding windows of `width` consecutive time steps over `[B, T+width-1, d]`,
/// giving `[B·T, width·d]` with row `b·T + t` holding steps `t..t+width`.
#[derive(Debug)]
struct Windows {
    width: usize,
}

impl Operation for Windows {
    fn name(&self) -> &'static str {
        "windows"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        let &[batch, padded, d] = x.shape() else {
            return Err(contract!("windows expects [batch, time, features], got {:?}", x.shape()));
        };
        if self.width == 0 || padded < self.width {
            return Err(contract!(
                "window width {} does not fit {} padded time steps",
                self.width,
                padded
            ));
        }
        let steps = padded - self.width + 1;
        let row = self.width * d;
        let mut data = Vec::with_capacity(batch * steps * row);
        for b in 0..batch {
            for t in 0..steps {
                let base = (b * padded + t) * d;
                data.extend_from_slice(&x.data()[base..base + row]);
            }
        }
        Ok(Tensor::from_parts(vec![batch * steps, row], data))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let x = ctx.inputs[0];
        let (batch, padded, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let steps = padded - self.width + 1;
        let row = self.width * d;
        let mut g = Tensor::zeros(x.shape().to_vec());
        let gd = g.data_mut();
        for b in 0..batch {
            for t in 0..steps {
                let src = &ctx.grad.data()[(b * steps + t) * row..][..row];
                let base = (b * padded + t) * d;
                for (acc, v) in gd[base..base + row].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        vec![Some(g)]
    }
}

/// Row gather from an embedding table.
#[derive(Debug)]
struct Embedding {
    ids: Vec<usize>,
}

impl Operation for Embedding {
    fn name(&self) -> &'static str {
        "embedding"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (vocab, dim) = inputs[0].dims2()?;
        let mut data = Vec::with_capacity(self.ids.len() * dim);
        for &id in &self.ids {
            if id >= vocab {
                return Err(contract!("embedding id {} out of range for {} rows", id, vocab));
            }
            data.extend_from_slice(&inputs[0].data()[id * dim..(id + 1) * dim]);
        }
        Ok(Tensor::from_parts(vec![self.ids.len(), dim], data))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let table = ctx.inputs[0];
        let dim = table.shape()[1];
        let mut g = Tensor::zeros(table.shape().to_vec());
        for (row, &id) in self.ids.iter().enumerate() {
            let src = &ctx.grad.data()[row * dim..(row + 1) * dim];
            for (acc, v) in g.data_mut()[id * dim..(id + 1) * dim].iter_mut().zip(src) {
                *acc += v;
            }
        }
        vec![Some(g)]
    }
}

/// Mean negative log-likelihood of integer targets under row-wise softmax.
#[derive(Debug)]
struct SoftmaxCrossEntropy {
    targets: Vec<usize>,
    probs: Vec<f64>,
}

impl Operation for SoftmaxCrossEntropy {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (rows, classes) = inputs[0].dims2()?;
        if rows != self.targets.len() || rows == 0 {
            return Err(contract!(
                "softmax_cross_entropy: {} rows of logits but {} targets",
                rows,
                self.targets.len()
            ));
        }
        if let Some(&bad) = self.targets.iter().find(|&&t| t >= classes) {
            return Err(contract!("target class {} out of range for {} classes", bad, classes));
        }
        self.probs = Vec::with_capacity(rows * classes);
        let mut total = 0.0;
        for (row, &target) in inputs[0].data().chunks(classes).zip(&self.targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln();
            total += log_z - (row[target] - max);
            self.probs.extend(row.iter().map(|v| (v - max).exp() / z));
        }
        Ok(Tensor::scalar(total / rows as f64))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let logits = ctx.inputs[0];
        let classes = logits.shape()[1];
        let rows = self.targets.len();
        let scale = ctx.grad.data()[0] / rows as f64;
        let mut g = self.probs.clone();
        for (r, &t) in self.targets.iter().enumerate() {
            g[r * classes + t] -= 1.0;
        }
        g.iter_mut().for_each(|v| *v *= scale);
        vec![Some(Tensor::from_parts(logits.shape().to_vec(), g))]
    }
}

/// Forget-gated running average over time, the fo-pooling scan:
/// `c_t = f_t ⊙ c_{t-1} + (1 - f_t) ⊙ z_t`, for inputs `f, z: [B, T, d]`
/// and `c0: [B, d]`, producing every `c_t` as `[B, T, d]`.
#[derive(Debug)]
struct ForgetScan;

impl Operation for ForgetScan {
    fn name(&self) -> &'static str {
        "forget_scan"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (f, z, c0) = (inputs[0], inputs[1], inputs[2]);
        if f.shape() != z.shape() {
            return Err(shape_err("forget_scan", f, z));
        }
        let &[batch, steps, d] = f.shape() else {
            return Err(contract!("forget_scan expects [batch, time, hidden], got {:?}", f.shape()));
        };
        if c0.shape() != [batch, d] {
            return Err(shape_err("forget_scan", f, c0));
        }
        let mut out = vec![0.0; batch * steps * d];
        let mut state = vec![0.0; d];
        for b in 0..batch {
            state.copy_from_slice(&c0.data()[b * d..(b + 1) * d]);
            for t in 0..steps {
                let base = (b * steps + t) * d;
                for (j, c) in state.iter_mut().enumerate() {
                    let ft = f.data()[base + j];
                    *c = *c * ft + z.data()[base + j] * (1.0 - ft);
                }
                out[base..base + d].copy_from_slice(&state);
            }
        }
        Ok(Tensor::from_parts(vec![batch, steps, d], out))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let (f, z, c0) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
        let (batch, steps, d) = (f.shape()[0], f.shape()[1], f.shape()[2]);
        let c = ctx.output.data();
        let g = ctx.grad.data();
        let mut gf = vec![0.0; f.len()];
        let mut gz = vec![0.0; z.len()];
        let mut gc0 = vec![0.0; c0.len()];
        let mut carry = vec![0.0; d];
        for b in 0..batch {
            carry.iter_mut().for_each(|v| *v = 0.0);
            for t in (0..steps).rev() {
                let base = (b * steps + t) * d;
                for j in 0..d {
                    let dc = g[base + j] + carry[j];
                    let ft = f.data()[base + j];
                    let prev = if t == 0 {
                        c0.data()[b * d + j]
                    } else {
                        c[base - d + j]
                    };
                    gf[base + j] = dc * (prev - z.data()[base + j]);
                    gz[base + j] = dc * (1.0 - ft);
                    carry[j] = dc * ft;
                }
            }
            gc0[b * d..(b + 1) * d].copy_from_slice(&carry);
        }
        vec![
            ctx.needs[0].then(|| Tensor::from_parts(f.shape().to_vec(), gf)),
            ctx.needs[1].then(|| Tensor::from_parts(z.shape().to_vec(), gz)),
            ctx.needs[2].then(|| Tensor::from_parts(c0.shape().to_vec(), gc0)),
        ]
    }
}

impl<'t> Var<'t> {
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(MatMul, &[self, other])
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(Binary { kind: BinaryKind::Add }, &[self, other])
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(Binary { kind: BinaryKind::Sub }, &[self, other])
    }

    /// Hadamard product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(Binary { kind: BinaryKind::Mul }, &[self, other])
    }

    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'t>> {
        self.tape().apply(Affine { scale, shift }, &[self])
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        self.affine(factor, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(self) -> Result<Var<'t>> {
        self.affine(-1.0, 1.0)
    }

    /// Adds a rank-1 bias along the last axis.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(AddBias, &[self, bias])
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.tape().apply(Sum { mean: false }, &[self])
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.tape().apply(Sum { mean: true }, &[self])
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| contract!("concat of zero tensors"))?;
        first.tape().apply(Concat { axis }, parts)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        self.tape().apply(Narrow { axis, start, len }, &[self])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        self.tape().apply(Reshape { shape: shape.into() }, &[self])
    }

    /// All length-`width` time windows of an already left-padded
    /// `[B, T+width-1, d]` sequence, as `[B·T, width·d]`.
    pub fn windows(self, width: usize) -> Result<Var<'t>> {
        self.tape().apply(Windows { width }, &[self])
    }

    /// Gathers rows `ids` of this `[V, d]` table.
    pub fn embedding(self, ids: &[usize]) -> Result<Var<'t>> {
        self.tape().apply(Embedding { ids: ids.to_vec() }, &[self])
    }

    /// Mean cross-entropy (nats) of `[N, V]` logits against `targets`.
    pub fn softmax_cross_entropy(self, targets: &[usize]) -> Result<Var<'t>> {
        self.tape().apply(
            SoftmaxCrossEntropy {
                targets: targets.to_vec(),
                probs: Vec::new(),
            },
            &[self],
        )
    }

    /// fo-pooling scan with forget gates `self` and candidates `z`.
    pub fn forget_scan(self, z: Var<'t>, c0: Var<'t>) -> Result<Var<'t>> {
        self.tape().apply(ForgetScan, &[self, z, c0])
    }
}
