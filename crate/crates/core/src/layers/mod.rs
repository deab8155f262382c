//! Recurrent layers: the QRNN with fo-pooling, the baseline LSTM and simple
//! RNN cells, and QRNN stacks with optional dense wiring.

mod init;
mod lstm;
mod qrnn;
mod rnn;
mod stack;

pub use init::{init_weights, InitScheme};
pub use lstm::{LstmCell, LstmOutput, LstmState};
pub use qrnn::{causal_window, Projection, QrnnLayer, QrnnOutput, QrnnState};
pub use rnn::SimpleRnnCell;
pub use stack::{dropout, QrnnStack, StackConfig, StackOutput};

use crate::tensor::Param;

/// Anything that owns trainable parameters, listed in declaration order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}
