//! Activation functions for candidate cell states.
//!
//! The single-stream activations (`tanh`, `sigmoid`, `relu`, `elu`) take one
//! pre-activation. The dual units take two independent pre-activations `a`
//! and `b` and return `g(a) - g(b)`:
//!
//! * DReLU: `max(0, a) - max(0, b)`, which is exactly zero when both inputs
//!   are non-positive, positive when only `a` fires and negative when only
//!   `b` fires.
//! * DELU: `elu(a) - elu(b)`, a smooth version that saturates to zero as
//!   both inputs go to minus infinity.
//!
//! Subgradients at the kinks follow the `x <= 0 => 0` convention.

use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Error, Result};
use crate::tensor::{BackwardCtx, Operation, Tensor, Var};

pub const DEFAULT_ALPHA: f64 = 1.0;

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn elu_scalar(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

#[inline]
fn elu_slope(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

#[inline]
fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(contract!("alpha must be a positive finite number, got {}", alpha))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

#[derive(Debug)]
struct Tanh;

impl Operation for Tanh {
    fn name(&self) -> &'static str {
        "tanh"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(f64::tanh))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        vec![ctx.grad.zip_map(ctx.output, |g, y| g * (1.0 - y * y)).ok()]
    }
}

#[derive(Debug)]
struct Sigmoid;

impl Operation for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(sigmoid_scalar))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        vec![ctx.grad.zip_map(ctx.output, |g, y| g * y * (1.0 - y)).ok()]
    }
}

#[derive(Debug)]
struct Relu;

impl Operation for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(|x| x.max(0.0)))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        vec![ctx.grad.zip_map(ctx.inputs[0], |g, x| g * step(x)).ok()]
    }

    fn kink_pattern(&self, inputs: &[&Tensor], out: &mut Vec<bool>) {
        out.extend(inputs[0].data().iter().map(|&x| x > 0.0));
    }
}

#[derive(Debug)]
struct Elu {
    alpha: f64,
}

impl Operation for Elu {
    fn name(&self) -> &'static str {
        "elu"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let alpha = self.alpha;
        Ok(inputs[0].map(|x| elu_scalar(x, alpha)))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let alpha = self.alpha;
        vec![ctx.grad.zip_map(ctx.inputs[0], |g, x| g * elu_slope(x, alpha)).ok()]
    }

    fn kink_pattern(&self, inputs: &[&Tensor], out: &mut Vec<bool>) {
        // Only a kink when the two one-sided slopes (alpha, 1) differ.
        if self.alpha != 1.0 {
            out.extend(inputs[0].data().iter().map(|&x| x > 0.0));
        }
    }
}

#[derive(Debug)]
struct DRelu;

impl Operation for DRelu {
    fn name(&self) -> &'static str {
        "drelu"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        same_shape("drelu", inputs[0], inputs[1])?;
        inputs[0].zip_map(inputs[1], |a, b| a.max(0.0) - b.max(0.0))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        vec![
            ctx.needs[0].then(|| g.zip_map(a, |g, a| g * step(a)).unwrap()),
            ctx.needs[1].then(|| g.zip_map(b, |g, b| -g * step(b)).unwrap()),
        ]
    }

    fn kink_pattern(&self, inputs: &[&Tensor], out: &mut Vec<bool>) {
        for t in inputs {
            out.extend(t.data().iter().map(|&x| x > 0.0));
        }
    }
}

#[derive(Debug)]
struct Delu {
    alpha: f64,
}

impl Operation for Delu {
    fn name(&self) -> &'static str {
        "delu"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        same_shape("delu", inputs[0], inputs[1])?;
        let alpha = self.alpha;
        inputs[0].zip_map(inputs[1], |a, b| elu_scalar(a, alpha) - elu_scalar(b, alpha))
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        let alpha = self.alpha;
        vec![
            ctx.needs[0].then(|| g.zip_map(a, |g, a| g * elu_slope(a, alpha)).unwrap()),
            ctx.needs[1].then(|| g.zip_map(b, |g, b| -g * elu_slope(b, alpha)).unwrap()),
        ]
    }

    fn kink_pattern(&self, inputs: &[&Tensor], out: &mut Vec<bool>) {
        if self.alpha != 1.0 {
            for t in inputs {
                out.extend(t.data().iter().map(|&x| x > 0.0));
            }
        }
    }
}

pub fn tanh<'t>(x: Var<'t>) -> Result<Var<'t>> {
    x.tape().apply(Tanh, &[x])
}

pub fn sigmoid<'t>(x: Var<'t>) -> Result<Var<'t>> {
    x.tape().apply(Sigmoid, &[x])
}

pub fn relu<'t>(x: Var<'t>) -> Result<Var<'t>> {
    x.tape().apply(Relu, &[x])
}

pub fn elu<'t>(x: Var<'t>, alpha: f64) -> Result<Var<'t>> {
    check_alpha(alpha)?;
    x.tape().apply(Elu { alpha }, &[x])
}

pub fn drelu<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    a.tape().apply(DRelu, &[a, b])
}

pub fn delu<'t>(a: Var<'t>, b: Var<'t>, alpha: f64) -> Result<Var<'t>> {
    check_alpha(alpha)?;
    a.tape().apply(Delu { alpha }, &[a, b])
}

/// Which nonlinearity produces a candidate (or hidden) state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Tanh,
    Sigmoid,
    Relu,
    Elu { alpha: f64 },
    DRelu,
    Delu { alpha: f64 },
}

impl ActivationKind {
    /// Parses a configuration tag; `alpha` only applies to `elu`/`delu`.
    pub fn from_tag(tag: &str, alpha: Option<f64>) -> Result<Self> {
        let alpha_or_default = || -> Result<f64> {
            let a = alpha.unwrap_or(DEFAULT_ALPHA);
            check_alpha(a)?;
            Ok(a)
        };
        let kind = match tag.trim().to_ascii_lowercase().as_str() {
            "tanh" => Self::Tanh,
            "sigmoid" => Self::Sigmoid,
            "relu" => Self::Relu,
            "elu" => Self::Elu {
                alpha: alpha_or_default()?,
            },
            "drelu" => Self::DRelu,
            "delu" => Self::Delu {
                alpha: alpha_or_default()?,
            },
            other => return Err(contract!("unknown activation tag {:?}", other)),
        };
        Ok(kind)
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Relu => "relu",
            Self::Elu { .. } => "elu",
            Self::DRelu => "drelu",
            Self::Delu { .. } => "delu",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Self::Elu { alpha } | Self::Delu { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// Dual units consume two pre-activation streams.
    pub fn is_dual(&self) -> bool {
        matches!(self, Self::DRelu | Self::Delu { .. })
    }

    /// Applies the activation. Dual kinds require `b`; single kinds reject it.
    pub fn apply<'t>(&self, a: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
        match (self, b) {
            (Self::Tanh, None) => tanh(a),
            (Self::Sigmoid, None) => sigmoid(a),
            (Self::Relu, None) => relu(a),
            (Self::Elu { alpha }, None) => elu(a, *alpha),
            (Self::DRelu, Some(b)) => drelu(a, b),
            (Self::Delu { alpha }, Some(b)) => delu(a, b, *alpha),
            (kind, b) => Err(contract!(
                "activation {} takes {} input stream(s), got {}",
                kind.tag(),
                if kind.is_dual() { 2 } else { 1 },
                if b.is_some() { 2 } else { 1 }
            )),
        }
    }

    /// Scalar reference evaluation, used by analysis code outside a tape.
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match *self {
            Self::Tanh => a.tanh(),
            Self::Sigmoid => sigmoid_scalar(a),
            Self::Relu => a.max(0.0),
            Self::Elu { alpha } => elu_scalar(a, alpha),
            Self::DRelu => a.max(0.0) - b.max(0.0),
            Self::Delu { alpha } => elu_scalar(a, alpha) - elu_scalar(b, alpha),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.alpha() {
            Some(alpha) => write!(f, "{}(alpha={})", self.tag(), alpha),
            None => f.write_str(self.tag()),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_tag(s, None)
    }
}
