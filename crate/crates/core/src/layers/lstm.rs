use rand::Rng;

use super::init::InitScheme;
use super::Parameterized;
use crate::activations::{sigmoid, tanh};
use crate::error::{contract, Error, Result};
use crate::tensor::{Param, Tape, Tensor, Var};

/// Hidden and cell state of an LSTM, `[batch, hidden]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden_size: usize) -> Self {
        Self {
            hidden: Tensor::zeros([batch, hidden_size]),
            cell: Tensor::zeros([batch, hidden_size]),
        }
    }
}

pub struct LstmOutput<'t> {
    /// `[batch, time, hidden]`
    pub hidden: Var<'t>,
    pub state: LstmState,
}

/// Baseline LSTM. Gate columns are ordered input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `[d_in, 4·d_h]`
    pub input_weights: Param,
    /// `[d_h, 4·d_h]`
    pub hidden_weights: Param,
    /// `[4·d_h]`
    pub bias: Param,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input_size: usize,
        hidden_size: usize,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(contract!("LSTM sizes must be positive"));
        }
        Ok(Self {
            input_size,
            hidden_size,
            input_weights: Param::new(
                format!("{name}.input_weights"),
                scheme.sample(&[input_size, 4 * hidden_size], rng)?,
            ),
            hidden_weights: Param::new(
                format!("{name}.hidden_weights"),
                scheme.sample(&[hidden_size, 4 * hidden_size], rng)?,
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros([4 * hidden_size])),
        })
    }

    /// One step from pre-computed input projection `x_proj: [batch, 4·d_h]`.
    fn step<'t>(
        &self,
        tape: &'t Tape,
        x_proj: Var<'t>,
        h: Var<'t>,
        c: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let d = self.hidden_size;
        let pre = x_proj
            .add(h.matmul(tape.param(&self.hidden_weights))?)?
            .add_bias(tape.param(&self.bias))?;
        let i = sigmoid(pre.narrow(1, 0, d)?)?;
        let f = sigmoid(pre.narrow(1, d, d)?)?;
        let o = sigmoid(pre.narrow(1, 2 * d, d)?)?;
        let g = tanh(pre.narrow(1, 3 * d, d)?)?;
        let c = f.mul(c)?.add(i.mul(g)?)?;
        let h = o.mul(tanh(c)?)?;
        Ok((h, c))
    }

    /// Sequential rollout over `x: [batch, time, d_in]`.
    ///
    /// The input projection is batched across time; the hidden-to-hidden
    /// product cannot be, so it is recorded once per step.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>, state: &LstmState) -> Result<LstmOutput<'t>> {
        let shape = x.shape();
        let &[batch, steps, d_in] = shape.as_slice() else {
            return Err(contract!("LSTM input must be [batch, time, features], got {:?}", shape));
        };
        let d = self.hidden_size;
        if d_in != self.input_size
            || state.hidden.shape() != [batch, d]
            || state.cell.shape() != [batch, d]
        {
            return Err(Error::Shape {
                op: "lstm forward",
                left: shape,
                right: state.hidden.shape().to_vec(),
            });
        }
        if steps == 0 {
            return Err(contract!("LSTM input has no time steps"));
        }
        let proj = x
            .reshape([batch * steps, d_in])?
            .matmul(tape.param(&self.input_weights))?
            .reshape([batch, steps, 4 * d])?;
        let mut h = tape.constant(state.hidden.clone());
        let mut c = tape.constant(state.cell.clone());
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = proj.narrow(1, t, 1)?.reshape([batch, 4 * d])?;
            (h, c) = self.step(tape, xt, h, c)?;
            outputs.push(h.reshape([batch, 1, d])?);
        }
        let hidden = Var::concat(&outputs, 1)?;
        Ok(LstmOutput {
            hidden,
            state: LstmState {
                hidden: h.value(),
                cell: c.value(),
            },
        })
    }
}

impl Parameterized for LstmCell {
    fn params(&self) -> Vec<&Param> {
        vec![&self.input_weights, &self.hidden_weights, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.input_weights, &mut self.hidden_weights, &mut self.bias]
    }
}
