use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::layers::QrnnStack;
use crate::tensor::{Tape, Tensor};

/// Gradient norm reaching each layer's input after one backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthProfile {
    pub activation: String,
    /// `‖dL/d input_i‖₂`, first layer first.
    pub norms: Vec<f64>,
}

impl DepthProfile {
    /// First-layer norm over last-layer norm.
    pub fn ratio(&self) -> f64 {
        self.norms[0] / self.norms[self.norms.len() - 1]
    }
}

/// Fixed random read-out used as the probe loss, so the result does not
/// depend on a softmax head.
pub fn probe_readout(shape: &[usize], seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9e7a);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// One forward and backward pass of `stack` over `input: [batch, time, d_in]`
/// from zero state, with loss `sum(output ⊙ R)` for a seeded random `R`.
pub fn gradient_depth_probe(stack: &QrnnStack, input: &Tensor, seed: u64) -> Result<DepthProfile> {
    let tape = Tape::new();
    let x = tape.var(input.clone(), true);
    let batch = input.shape().first().copied().unwrap_or(0);
    let out = stack.forward(&tape, x, &stack.zero_states(batch), None)?;
    let readout = tape.constant(probe_readout(&out.output.shape(), seed)?);
    let loss = out.output.mul(readout)?.sum()?;
    loss.backward()?;
    let norms = out
        .layer_inputs
        .iter()
        .map(|v| v.grad().map_or(0.0, |g| g.norm_l2()))
        .collect();
    Ok(DepthProfile {
        activation: stack.config.activation.to_string(),
        norms,
    })
}

/// Runs the probe on two stacks that differ only in their activation.
pub fn compare_depth(a: &QrnnStack, b: &QrnnStack, input: &Tensor, seed: u64) -> Result<(DepthProfile, DepthProfile)> {
    let (ca, cb) = (&a.config, &b.config);
    if ca.layers != cb.layers
        || ca.hidden_size != cb.hidden_size
        || ca.input_size != cb.input_size
        || ca.dense != cb.dense
        || ca.conv_width != cb.conv_width
        || ca.first_conv_width != cb.first_conv_width
    {
        return Err(contract!("depth comparison needs stacks that differ only in activation"));
    }
    Ok((gradient_depth_probe(a, input, seed)?, gradient_depth_probe(b, input, seed)?))
}
