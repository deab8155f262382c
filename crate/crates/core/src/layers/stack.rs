use rand::{Rng, RngCore};

use super::init::InitScheme;
use super::qrnn::{QrnnLayer, QrnnState};
use super::Parameterized;
use crate::activations::ActivationKind;
use crate::error::{contract, Result};
use crate::tensor::{Param, Tape, Tensor, Var};

/// Shape of a QRNN stack.
#[derive(Clone, Debug, PartialEq)]
pub struct StackConfig {
    pub layers: usize,
    pub input_size: usize,
    pub hidden_size: usize,
    /// Convolution width of the first layer.
    pub first_conv_width: usize,
    /// Convolution width of every later layer.
    pub conv_width: usize,
    pub activation: ActivationKind,
    /// Dropout on each layer output while training.
    pub dropout: f64,
    /// Feed every layer the concatenation of the input and all earlier outputs.
    pub dense: bool,
    pub init: InitScheme,
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(contract!("a stack needs at least one layer"));
        }
        if self.input_size == 0 || self.hidden_size == 0 {
            return Err(contract!("stack sizes must be positive"));
        }
        if self.first_conv_width == 0 || self.conv_width == 0 {
            return Err(contract!("convolution widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(contract!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Feature width fed into layer `i`.
    pub fn layer_input_size(&self, i: usize) -> usize {
        if self.dense {
            self.input_size + i * self.hidden_size
        } else if i == 0 {
            self.input_size
        } else {
            self.hidden_size
        }
    }

    pub fn layer_conv_width(&self, i: usize) -> usize {
        if i == 0 {
            self.first_conv_width
        } else {
            self.conv_width
        }
    }
}

pub struct StackOutput<'t> {
    /// Output of the last layer (after dropout), `[batch, time, hidden]`.
    pub output: Var<'t>,
    /// What each layer consumed; gradients w.r.t. these measure depth-wise flow.
    pub layer_inputs: Vec<Var<'t>>,
    /// Cell states of every layer, `[batch, time, hidden]`.
    pub cells: Vec<Var<'t>>,
    pub states: Vec<QrnnState>,
}

#[derive(Clone, Debug)]
pub struct QrnnStack {
    pub config: StackConfig,
    pub layers: Vec<QrnnLayer>,
}

impl QrnnStack {
    pub fn new<R: Rng + ?Sized>(config: StackConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|i| {
                QrnnLayer::new(
                    &format!("qrnn{i}"),
                    config.layer_conv_width(i),
                    config.layer_input_size(i),
                    config.hidden_size,
                    config.activation,
                    config.init,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, layers })
    }

    pub fn zero_states(&self, batch: usize) -> Vec<QrnnState> {
        self.layers.iter().map(|l| QrnnState::zeros(batch, l)).collect()
    }

    /// Runs all layers. Dropout is applied only when `dropout_rng` is given.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        states: &[QrnnState],
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<StackOutput<'t>> {
        if states.len() != self.layers.len() {
            return Err(contract!(
                "stack has {} layers but {} states were supplied",
                self.layers.len(),
                states.len()
            ));
        }
        let mut features = vec![x];
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut cells = Vec::with_capacity(self.layers.len());
        let mut next_states = Vec::with_capacity(self.layers.len());
        for (layer, state) in self.layers.iter().zip(states) {
            let input = if self.config.dense && features.len() > 1 {
                Var::concat(&features, 2)?
            } else {
                *features.last().expect("non-empty")
            };
            let out = layer.forward(tape, input, state)?;
            let mut hidden = out.hidden;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                hidden = dropout(hidden, self.config.dropout, rng)?;
            }
            layer_inputs.push(input);
            cells.push(out.cells);
            next_states.push(out.state);
            if self.config.dense {
                features.push(hidden);
            } else {
                features = vec![hidden];
            }
        }
        Ok(StackOutput {
            output: *features.last().expect("non-empty"),
            layer_inputs,
            cells,
            states: next_states,
        })
    }
}

impl Parameterized for QrnnStack {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Inverted dropout: keeps each value with probability `1 - p` and scales
/// survivors by `1 / (1 - p)`. `p = 0` is the identity.
pub fn dropout<'t>(x: Var<'t>, p: f64, rng: &mut dyn RngCore) -> Result<Var<'t>> {
    if !(0.0..1.0).contains(&p) {
        return Err(contract!("dropout must lie in [0, 1), got {}", p));
    }
    if p == 0.0 {
        return Ok(x);
    }
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    x.mul(x.tape().constant(Tensor::new(shape, mask)?))
}
