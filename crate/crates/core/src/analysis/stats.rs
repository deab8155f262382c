use crate::error::{contract, Result};
use crate::lm::{run_inference, LmModel};

/// Sign/sparsity profile of a set of activations.
///
/// `near_zero` counts values in the open interval `(-tau, tau)`; values of
/// exactly `±tau` count as negative/positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationStats {
    pub near_zero: f64,
    pub negative: f64,
    pub positive: f64,
    pub tau: f64,
    pub samples: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct StatsAccumulator {
    tau: f64,
    near: u64,
    negative: u64,
    positive: u64,
}

impl StatsAccumulator {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(contract!("interval half-width must be positive, got {}", tau));
        }
        Ok(Self {
            tau,
            near: 0,
            negative: 0,
            positive: 0,
        })
    }

    pub fn add(&mut self, values: &[f64]) {
        for &v in values {
            if v > -self.tau && v < self.tau {
                self.near += 1;
            } else if v < 0.0 {
                self.negative += 1;
            } else {
                self.positive += 1;
            }
        }
    }

    pub fn finish(&self) -> Result<ActivationStats> {
        let n = self.near + self.negative + self.positive;
        if n == 0 {
            return Err(contract!("no activations were recorded"));
        }
        let total = n as f64;
        Ok(ActivationStats {
            near_zero: self.near as f64 / total,
            negative: self.negative as f64 / total,
            positive: self.positive as f64 / total,
            tau: self.tau,
            samples: n,
        })
    }
}

impl ActivationStats {
    pub fn of(values: &[f64], tau: f64) -> Result<Self> {
        let mut acc = StatsAccumulator::new(tau)?;
        acc.add(values);
        acc.finish()
    }
}

/// Cell-state statistics per layer over a held-out stream, running the model
/// in inference mode with carried state.
pub fn cell_state_stats(
    model: &LmModel,
    ids: &[usize],
    seg_len: usize,
    tau: f64,
) -> Result<Vec<ActivationStats>> {
    if ids.len() < 2 {
        return Err(contract!("activation statistics need a non-empty stream"));
    }
    let mut accs = vec![StatsAccumulator::new(tau)?; model.stack.layers.len()];
    run_inference(model, ids, seg_len, |seg| {
        for (acc, cells) in accs.iter_mut().zip(seg.cells) {
            acc.add(cells.data());
        }
    })?;
    accs.iter().map(StatsAccumulator::finish).collect()
}
