use std::f64::consts::LN_2;

use super::model::LmModel;
use crate::error::{contract, Result};
use crate::tensor::{Tape, Tensor};

/// Converts mean cross-entropy in nats to bits per character.
pub fn bpc(nats: f64) -> Result<f64> {
    if nats.is_nan() || nats < 0.0 {
        return Err(contract!("cross-entropy must be non-negative, got {}", nats));
    }
    Ok(nats / LN_2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    /// Summed cross-entropy over all predicted characters, in nats.
    pub total_nats: f64,
    pub predictions: usize,
    pub bpc: f64,
}

impl EvalResult {
    pub fn mean_nats(&self) -> f64 {
        self.total_nats / self.predictions as f64
    }
}

/// Per-segment view handed to inference visitors.
pub struct SegmentView<'a> {
    /// Cell states of every layer, `[1, len, hidden]`.
    pub cells: &'a [Tensor],
}

/// Runs the model without dropout over one lane of `ids`, in segments of
/// `seg_len` with carried state, predicting `ids[i+1]` from `ids[..=i]`.
pub fn run_inference(
    model: &LmModel,
    ids: &[usize],
    seg_len: usize,
    mut visit: impl FnMut(&SegmentView<'_>),
) -> Result<EvalResult> {
    if seg_len == 0 {
        return Err(contract!("segment length must be positive"));
    }
    if ids.len() < 2 {
        return Err(contract!("need at least two symbols to evaluate, got {}", ids.len()));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= model.vocab_size) {
        return Err(contract!(
            "symbol id {} does not fit the model's vocabulary of {}",
            bad,
            model.vocab_size
        ));
    }
    let mut states = model.zero_states(1);
    let mut total = 0.0;
    let mut start = 0;
    let last = ids.len() - 1;
    while start < last {
        let len = seg_len.min(last - start);
        let inputs = &ids[start..start + len];
        let targets = &ids[start + 1..start + len + 1];
        let tape = Tape::new();
        let fwd = model.forward(&tape, inputs, 1, &states, None)?;
        let loss = fwd.logits.softmax_cross_entropy(targets)?;
        total += loss.value().item()? * len as f64;
        let cells: Vec<Tensor> = fwd.cells.iter().map(|c| c.value()).collect();
        visit(&SegmentView { cells: &cells });
        states = fwd.states;
        start += len;
    }
    Ok(EvalResult {
        total_nats: total,
        predictions: last,
        bpc: bpc(total / last as f64)?,
    })
}

/// Held-out bits per character with carried state and dropout off.
pub fn evaluate(model: &LmModel, ids: &[usize], seg_len: usize) -> Result<EvalResult> {
    run_inference(model, ids, seg_len, |_| {})
}
