use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activations::ActivationKind;
use crate::error::{contract, Result};
use crate::layers::{InitScheme, LstmCell, LstmState, QrnnLayer, QrnnState};
use crate::tensor::{Tape, Tensor};

/// A single recurrent layer under measurement.
#[derive(Clone, Debug)]
pub enum BenchSubject {
    Qrnn(QrnnLayer),
    Lstm(LstmCell),
}

impl BenchSubject {
    pub fn qrnn(conv_width: usize, input: usize, hidden: usize, activation: ActivationKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = InitScheme::Uniform { range: 0.05 };
        QrnnLayer::new("bench", conv_width, input, hidden, activation, scheme, &mut rng).map(Self::Qrnn)
    }

    pub fn lstm(input: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LstmCell::new("bench", input, hidden, InitScheme::Uniform { range: 0.05 }, &mut rng).map(Self::Lstm)
    }

    pub fn tag(&self) -> String {
        match self {
            Self::Qrnn(l) => format!("qrnn-{}", l.activation),
            Self::Lstm(_) => "lstm".to_string(),
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            Self::Qrnn(l) => l.input_size,
            Self::Lstm(l) => l.input_size,
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            Self::Qrnn(l) => l.hidden_size,
            Self::Lstm(l) => l.hidden_size,
        }
    }

    /// One pass over `x`; returns the wall-clock seconds spent.
    pub fn run(&self, x: &Tensor, backward: bool) -> Result<f64> {
        let batch = x.shape()[0];
        let start = Instant::now();
        let tape = Tape::new();
        let xv = tape.var(x.clone(), backward);
        let hidden = match self {
            Self::Qrnn(l) => l.forward(&tape, xv, &QrnnState::zeros(batch, l))?.hidden,
            Self::Lstm(l) => l.forward(&tape, xv, &LstmState::zeros(batch, l.hidden_size))?.hidden,
        };
        let loss = hidden.mean()?;
        if backward {
            loss.backward()?;
        }
        Ok(start.elapsed().as_secs_f64())
    }
}

/// Median rates of one subject, plus its speed relative to a baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputReport {
    pub model: String,
    pub hidden_size: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub forward_tps: f64,
    pub train_tps: f64,
    /// Forward+backward rate over the baseline's.
    pub ratio: f64,
}

impl ThroughputReport {
    pub const TSV_HEADER: &'static str = "model\thidden\tbatch\tseq_len\tfwd_tok_s\tfwd_bwd_tok_s\tratio";

    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.1}\t{:.1}\t{:.4}",
            self.model, self.hidden_size, self.batch, self.seq_len, self.forward_tps, self.train_tps, self.ratio
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BenchPlan {
    pub batch: usize,
    pub seq_len: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl BenchPlan {
    pub fn new(batch: usize, seq_len: usize, repeats: usize) -> Self {
        Self {
            batch,
            seq_len,
            repeats,
            warmup: 3,
            seed: 0,
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times `subject` against `baseline` on the same random input.
///
/// Repeats alternate between the two, swapping the order each time, so slow
/// drift in machine speed hits both equally. Returns `(subject, baseline)`; the baseline's ratio is 1.
pub fn throughput_bench(
    subject: &BenchSubject,
    baseline: &BenchSubject,
    plan: BenchPlan,
) -> Result<(ThroughputReport, ThroughputReport)> {
    if plan.batch == 0 || plan.seq_len == 0 || plan.repeats == 0 {
        return Err(contract!("batch, sequence length and repeats must be positive"));
    }
    if plan.warmup < 3 {
        return Err(contract!("at least 3 warmup iterations are required, got {}", plan.warmup));
    }
    if subject.input_size() != baseline.input_size() || subject.hidden_size() != baseline.hidden_size() {
        return Err(contract!("benchmarked models must have matching sizes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let n = plan.batch * plan.seq_len * subject.input_size();
    let x = Tensor::new(
        [plan.batch, plan.seq_len, subject.input_size()],
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;

    let models = [subject, baseline];
    for _ in 0..plan.warmup {
        for m in models {
            m.run(&x, false)?;
            m.run(&x, true)?;
        }
    }
    let mut fwd = [Vec::new(), Vec::new()];
    let mut train = [Vec::new(), Vec::new()];
    for r in 0..plan.repeats {
        // Swap who goes first every repeat; running second is measurably
        // slower on some machines (allocator and cache state).
        for k in [r % 2, 1 - r % 2] {
            fwd[k].push(models[k].run(&x, false)?);
            train[k].push(models[k].run(&x, true)?);
        }
    }
    let tokens = (plan.batch * plan.seq_len) as f64;
    let rate = |secs: &Vec<f64>| tokens / median(secs.clone());
    let train_rates = [rate(&train[0]), rate(&train[1])];
    let report = |k: usize| ThroughputReport {
        model: models[k].tag(),
        hidden_size: models[k].hidden_size(),
        batch: plan.batch,
        seq_len: plan.seq_len,
        forward_tps: rate(&fwd[k]),
        train_tps: train_rates[k],
        ratio: train_rates[k] / train_rates[1],
    };
    Ok((report(0), report(1)))
}
