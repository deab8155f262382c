use rand::Rng;

use super::init::InitScheme;
use super::Parameterized;
use crate::activations::ActivationKind;
use crate::error::{contract, Error, Result};
use crate::tensor::{Param, Tape, Tensor, Var};

/// Elman cell `h_t = g(h_{t-1}·W + x_t·U + b)` (row-vector convention).
#[derive(Clone, Debug)]
pub struct SimpleRnnCell {
    /// `[d_h, d_h]`
    pub recurrent: Param,
    /// `[d_in, d_h]`
    pub input: Param,
    /// `[d_h]`
    pub bias: Param,
    pub activation: ActivationKind,
}

impl SimpleRnnCell {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input_size: usize,
        hidden_size: usize,
        activation: ActivationKind,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        let recurrent = scheme.sample(&[hidden_size, hidden_size], rng)?;
        let input = scheme.sample(&[input_size, hidden_size], rng)?;
        Self::from_weights(name, recurrent, input, Tensor::zeros([hidden_size]), activation)
    }

    pub fn from_weights(
        name: &str,
        recurrent: Tensor,
        input: Tensor,
        bias: Tensor,
        activation: ActivationKind,
    ) -> Result<Self> {
        if activation.is_dual() {
            return Err(contract!("simple RNN takes a single-stream activation, got {}", activation));
        }
        let (r, c) = recurrent.dims2()?;
        let (_, ic) = input.dims2()?;
        if r != c || ic != r || bias.shape() != [r] {
            return Err(Error::Shape {
                op: "simple rnn weights",
                left: recurrent.shape().to_vec(),
                right: input.shape().to_vec(),
            });
        }
        Ok(Self {
            recurrent: Param::new(format!("{name}.recurrent"), recurrent),
            input: Param::new(format!("{name}.input"), input),
            bias: Param::new(format!("{name}.bias"), bias),
            activation,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.bias.numel()
    }

    /// Hidden states `h_1..h_T` for `x: [batch, time, d_in]`, each `[batch, d_h]`.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>, h0: Var<'t>) -> Result<Vec<Var<'t>>> {
        let shape = x.shape();
        let &[batch, steps, d_in] = shape.as_slice() else {
            return Err(contract!("RNN input must be [batch, time, features], got {:?}", shape));
        };
        if h0.shape() != [batch, self.hidden_size()] {
            return Err(Error::Shape {
                op: "simple rnn forward",
                left: shape,
                right: h0.shape(),
            });
        }
        let w = tape.param(&self.recurrent);
        let u = tape.param(&self.input);
        let b = tape.param(&self.bias);
        let mut h = h0;
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = x.narrow(1, t, 1)?.reshape([batch, d_in])?;
            let pre = h.matmul(w)?.add(xt.matmul(u)?)?.add_bias(b)?;
            h = self.activation.apply(pre, None)?;
            out.push(h);
        }
        Ok(out)
    }
}

impl Parameterized for SimpleRnnCell {
    fn params(&self) -> Vec<&Param> {
        vec![&self.recurrent, &self.input, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.recurrent, &mut self.input, &mut self.bias]
    }
}
