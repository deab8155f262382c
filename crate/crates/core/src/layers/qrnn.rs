use rand::Rng;

use super::init::InitScheme;
use super::Parameterized;
use crate::activations::{sigmoid, ActivationKind};
use crate::error::{contract, Error, Result};
use crate::tensor::{Param, Tape, Tensor, Var};

/// Weight matrix plus bias for one projection of the causal window.
#[derive(Clone, Debug)]
pub struct Projection {
    pub weight: Param,
    pub bias: Param,
}

impl Projection {
    fn new<R: Rng + ?Sized>(
        name: &str,
        rows: usize,
        cols: usize,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: Param::new(format!("{name}.weight"), scheme.sample(&[rows, cols], rng)?),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros([cols])),
        })
    }

    fn apply<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(tape.param(&self.weight))?
            .add_bias(tape.param(&self.bias))
    }
}

/// Carried state of one QRNN layer between segments.
///
/// Besides the cell state this holds the last `n - 1` inputs, so the causal
/// window at the start of the next segment sees real history instead of
/// zero padding. Both are plain tensors, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct QrnnState {
    /// `[batch, hidden]`
    pub cell: Tensor,
    /// `[batch, conv_width - 1, input]`
    pub history: Tensor,
}

impl QrnnState {
    pub fn zeros(batch: usize, layer: &QrnnLayer) -> Self {
        Self {
            cell: Tensor::zeros([batch, layer.hidden_size]),
            history: Tensor::zeros([batch, layer.conv_width - 1, layer.input_size]),
        }
    }
}

/// Result of running a layer over a sequence.
pub struct QrnnOutput<'t> {
    /// `h_t` for every step, `[batch, time, hidden]`.
    pub hidden: Var<'t>,
    /// `c_t` for every step, `[batch, time, hidden]`.
    pub cells: Var<'t>,
    pub state: QrnnState,
}

/// Quasi-recurrent layer with fo-pooling.
///
/// Gates and candidates are projections of the causal window
/// `x_{t-n+1..t}`; the only sequential part is the elementwise scan
/// `c_t = f_t ⊙ c_{t-1} + (1 - f_t) ⊙ c̃_t`, `h_t = o_t ⊙ c_t`.
#[derive(Clone, Debug)]
pub struct QrnnLayer {
    pub conv_width: usize,
    pub input_size: usize,
    pub hidden_size: usize,
    pub activation: ActivationKind,
    /// Forget and output gates side by side: `[n·d_in, 2·d_h]`.
    pub gates: Projection,
    /// One projection for single-stream activations, two for dual ones.
    pub candidates: Vec<Projection>,
}

impl QrnnLayer {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        conv_width: usize,
        input_size: usize,
        hidden_size: usize,
        activation: ActivationKind,
        scheme: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        if conv_width == 0 || input_size == 0 || hidden_size == 0 {
            return Err(contract!(
                "QRNN layer sizes must be positive (width {conv_width}, input {input_size}, hidden {hidden_size})"
            ));
        }
        let window = conv_width * input_size;
        let gates = Projection::new(&format!("{name}.gates"), window, 2 * hidden_size, scheme, rng)?;
        let streams = if activation.is_dual() { 2 } else { 1 };
        let candidates = (0..streams)
            .map(|k| {
                Projection::new(&format!("{name}.candidate{k}"), window, hidden_size, scheme, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            conv_width,
            input_size,
            hidden_size,
            activation,
            gates,
            candidates,
        })
    }

    pub fn window_size(&self) -> usize {
        self.conv_width * self.input_size
    }

    /// Closed-form parameter count.
    pub fn expected_param_count(
        conv_width: usize,
        input_size: usize,
        hidden_size: usize,
        activation: ActivationKind,
    ) -> usize {
        let window = conv_width * input_size;
        let streams = if activation.is_dual() { 2 } else { 1 };
        window * 2 * hidden_size + 2 * hidden_size + streams * (window * hidden_size + hidden_size)
    }

    fn candidate<'t>(&self, tape: &'t Tape, window: Var<'t>) -> Result<Var<'t>> {
        let a = self.candidates[0].apply(tape, window)?;
        let b = match self.candidates.get(1) {
            Some(p) => Some(p.apply(tape, window)?),
            None => None,
        };
        self.activation.apply(a, b)
    }

    fn split_gates<'t>(&self, gates: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let d = self.hidden_size;
        let f = sigmoid(gates.narrow(1, 0, d)?)?;
        let o = sigmoid(gates.narrow(1, d, d)?)?;
        Ok((f, o))
    }

    /// One recurrent step from an explicit window `[batch, n·d_in]`.
    /// Returns `(c_t, h_t)`.
    pub fn step<'t>(
        &self,
        tape: &'t Tape,
        window: Var<'t>,
        c_prev: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let ws = window.shape();
        let cs = c_prev.shape();
        if ws.len() != 2 || ws[1] != self.window_size() || cs != [ws[0], self.hidden_size] {
            return Err(Error::Shape {
                op: "qrnn step",
                left: ws,
                right: cs,
            });
        }
        let (f, o) = self.split_gates(self.gates.apply(tape, window)?)?;
        let cand = self.candidate(tape, window)?;
        let c = c_prev.mul(f)?.add(cand.mul(f.one_minus()?)?)?;
        let h = c.mul(o)?;
        Ok((c, h))
    }

    /// Runs the whole sequence `x: [batch, time, d_in]`: all projections in
    /// one batched product each, then the fo-pooling scan.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        state: &QrnnState,
    ) -> Result<QrnnOutput<'t>> {
        let shape = x.shape();
        let &[batch, steps, d_in] = shape.as_slice() else {
            return Err(contract!("QRNN input must be [batch, time, features], got {:?}", shape));
        };
        let n = self.conv_width;
        if d_in != self.input_size
            || state.cell.shape() != [batch, self.hidden_size]
            || state.history.shape() != [batch, n - 1, d_in]
        {
            return Err(Error::Shape {
                op: "qrnn forward",
                left: shape,
                right: state.cell.shape().to_vec(),
            });
        }
        let padded = if n > 1 {
            Var::concat(&[tape.constant(state.history.clone()), x], 1)?
        } else {
            x
        };
        let windows = padded.windows(n)?;
        let d = self.hidden_size;
        let (f, o) = self.split_gates(self.gates.apply(tape, windows)?)?;
        let f = f.reshape([batch, steps, d])?;
        let o = o.reshape([batch, steps, d])?;
        let cand = self.candidate(tape, windows)?.reshape([batch, steps, d])?;
        let cells = f.forget_scan(cand, tape.constant(state.cell.clone()))?;
        let hidden = cells.mul(o)?;

        let next = tape.with_value(cells, |c| last_steps(c, 1))?.reshape([batch, d])?;
        let history = tape.with_value(padded, |p| last_steps(p, n - 1))?;
        Ok(QrnnOutput {
            hidden,
            cells,
            state: QrnnState {
                cell: next,
                history,
            },
        })
    }
}

/// The trailing `k` time steps of a `[batch, time, d]` tensor.
fn last_steps(t: &Tensor, k: usize) -> Result<Tensor> {
    let (batch, steps, d) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if k > steps {
        return Err(contract!("cannot take {k} trailing steps of {steps}"));
    }
    let mut data = Vec::with_capacity(batch * k * d);
    for b in 0..batch {
        let start = (b * steps + steps - k) * d;
        data.extend_from_slice(&t.data()[start..start + k * d]);
    }
    Tensor::new([batch, k, d], data)
}

impl Parameterized for QrnnLayer {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.gates.weight, &self.gates.bias];
        for c in &self.candidates {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.gates.weight, &mut self.gates.bias];
        for c in &mut self.candidates {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }
}

/// Causal window `x_{t-n+1..t}` of `x: [batch, time, d]` as `[batch, n·d]`,
/// zero-filled for negative time indices.
pub fn causal_window<'t>(x: Var<'t>, t: usize, n: usize) -> Result<Var<'t>> {
    let shape = x.shape();
    let &[batch, steps, d] = shape.as_slice() else {
        return Err(contract!("causal window input must be [batch, time, features], got {:?}", shape));
    };
    if t >= steps {
        return Err(contract!("time index {t} out of range for {steps} steps"));
    }
    if n == 0 {
        return Err(contract!("window width must be positive"));
    }
    let mut parts = Vec::with_capacity(n);
    let missing = (n - 1).saturating_sub(t);
    if missing > 0 {
        parts.push(x.tape().constant(Tensor::zeros([batch, missing, d])));
    }
    let first = (t + 1).saturating_sub(n);
    parts.push(x.narrow(1, first, t + 1 - first)?);
    let joined = if parts.len() == 1 {
        parts[0]
    } else {
        Var::concat(&parts, 1)?
    };
    joined.reshape([batch, n * d])
}
