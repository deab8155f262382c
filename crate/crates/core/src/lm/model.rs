use rand::{Rng, RngCore};

use crate::error::{contract, Result};
use crate::layers::{Parameterized, QrnnStack, QrnnState, StackConfig};
use crate::tensor::{Param, Tape, Tensor, Var};

/// Embedding table, QRNN stack and softmax classifier over characters.
#[derive(Clone, Debug)]
pub struct LmModel {
    pub vocab_size: usize,
    /// `[V, d_e]`
    pub embedding: Param,
    pub stack: QrnnStack,
    /// `[d_h, V]`
    pub output_weight: Param,
    /// `[V]`
    pub output_bias: Param,
}

pub struct LmForward<'t> {
    /// `[batch·seq_len, V]`, rows ordered lane-major.
    pub logits: Var<'t>,
    pub cells: Vec<Var<'t>>,
    pub layer_inputs: Vec<Var<'t>>,
    pub states: Vec<QrnnState>,
}

impl LmModel {
    /// `stack.input_size` is the embedding width.
    pub fn new<R: Rng + ?Sized>(vocab_size: usize, stack: StackConfig, rng: &mut R) -> Result<Self> {
        if vocab_size == 0 {
            return Err(contract!("vocabulary must not be empty"));
        }
        let embed = stack.input_size;
        let hidden = stack.hidden_size;
        let scheme = stack.init;
        let embedding = Param::new("embedding", scheme.sample(&[vocab_size, embed], rng)?);
        let stack = QrnnStack::new(stack, rng)?;
        let output_weight = Param::new("output.weight", scheme.sample(&[hidden, vocab_size], rng)?);
        let output_bias = Param::new("output.bias", Tensor::zeros([vocab_size]));
        Ok(Self {
            vocab_size,
            embedding,
            stack,
            output_weight,
            output_bias,
        })
    }

    pub fn config(&self) -> &StackConfig {
        &self.stack.config
    }

    pub fn zero_states(&self, batch: usize) -> Vec<QrnnState> {
        self.stack.zero_states(batch)
    }

    /// Logits for `inputs` laid out as `batch` lanes of `seq_len` ids.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        inputs: &[usize],
        batch: usize,
        states: &[QrnnState],
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<LmForward<'t>> {
        if batch == 0 || inputs.is_empty() || inputs.len() % batch != 0 {
            return Err(contract!("{} ids do not split into {} lanes", inputs.len(), batch));
        }
        let seq_len = inputs.len() / batch;
        let embed = self.stack.config.input_size;
        let x = tape
            .param(&self.embedding)
            .embedding(inputs)?
            .reshape([batch, seq_len, embed])?;
        let out = self.stack.forward(tape, x, states, dropout_rng)?;
        let hidden = self.stack.config.hidden_size;
        let logits = out
            .output
            .reshape([batch * seq_len, hidden])?
            .matmul(tape.param(&self.output_weight))?
            .add_bias(tape.param(&self.output_bias))?;
        Ok(LmForward {
            logits,
            cells: out.cells,
            layer_inputs: out.layer_inputs,
            states: out.states,
        })
    }
}

impl Parameterized for LmModel {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.embedding];
        out.extend(self.stack.params());
        out.push(&self.output_weight);
        out.push(&self.output_bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.stack.params_mut());
        out.push(&mut self.output_weight);
        out.push(&mut self.output_bias);
        out
    }
}
