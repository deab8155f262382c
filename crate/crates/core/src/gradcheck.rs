//! Central finite-difference gradient checks.
//!
//! A case builds a graph from some input tensors and a parameterised model,
//! reduces the output with a fixed positive random read-out, and the analytic
//! gradient of every input and parameter coordinate is compared with
//! `(L(x + h) - L(x - h)) / 2h`. Coordinates whose perturbation by the kink
//! margin flips the branch of any piecewise op are skipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activations::ActivationKind;
use crate::error::{contract, Result};
use crate::layers::{InitScheme, LstmCell, LstmState, Parameterized, QrnnLayer, QrnnStack, QrnnState, StackConfig};
use crate::tensor::{Param, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates closer than this to a kink are excluded.
    pub kink_margin: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            kink_margin: 1e-4,
            points: 20,
            seed: 0,
        }
    }
}

/// Outcome of one named check over all its random points.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub points: usize,
    pub coordinates: usize,
    pub skipped: usize,
    /// Worst per-point relative error `‖a - n‖₂ / max(‖a‖₂, ‖n‖₂)`.
    pub max_rel_error: f64,
    pub passed: bool,
}

impl CheckReport {
    pub const TSV_HEADER: &'static str = "check\tpoints\tcoordinates\tskipped\tmax_rel_error\tresult";

    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.3e}\t{}",
            self.name,
            self.points,
            self.coordinates,
            self.skipped,
            self.max_rel_error,
            if self.passed { "pass" } else { "fail" }
        )
    }
}

/// Model without parameters, for cases over plain inputs.
impl Parameterized for () {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Integer labels carried alongside a case (targets, embedding ids).
#[derive(Clone, Debug)]
pub struct Labels(pub Vec<usize>);

impl Parameterized for Labels {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

fn readout(shape: &[usize], seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.5..1.5)).collect())
}

struct Eval {
    loss: f64,
    signature: u64,
}

fn evaluate<M, F>(f: &F, inputs: &[Tensor], model: &M, seed: u64) -> Result<Eval>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>], &M) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone(), false)).collect();
    let out = f(&tape, &vars, model)?;
    let r = tape.constant(readout(&out.shape(), seed)?);
    let loss = out.mul(r)?.sum()?.value().item()?;
    Ok(Eval {
        loss,
        signature: tape.kink_signature(),
    })
}

/// Location of one scalar being perturbed.
#[derive(Clone, Copy)]
enum Slot {
    Input(usize, usize),
    Param(usize, usize),
}

fn poke<M: Parameterized>(inputs: &mut [Tensor], model: &mut M, slot: Slot, value: Option<f64>) -> f64 {
    let cell = match slot {
        Slot::Input(k, i) => &mut inputs[k].data_mut()[i],
        Slot::Param(k, i) => {
            let param = model.params_mut().into_iter().nth(k).expect("slot refers to a parameter");
            &mut param.value_mut().data_mut()[i]
        }
    };
    let old = *cell;
    if let Some(v) = value {
        *cell = v;
    }
    old
}

/// Compares analytic and numerical gradients at one point.
/// Returns `(relative error, coordinates compared, coordinates skipped)`.
pub fn check_point<M, F>(
    f: &F,
    inputs: &[Tensor],
    model: &mut M,
    config: &GradCheckConfig,
    seed: u64,
) -> Result<(f64, usize, usize)>
where
    M: Parameterized,
    F: for<'t> Fn(&'t Tape, &[Var<'t>], &M) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone(), true)).collect();
    let out = f(&tape, &vars, model)?;
    let r = tape.constant(readout(&out.shape(), seed)?);
    out.mul(r)?.sum()?.backward()?;
    let base = tape.kink_signature();

    let mut slots = Vec::new();
    let mut analytic = Vec::new();
    for (k, (v, t)) in vars.iter().zip(inputs).enumerate() {
        let g = v.grad().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
        for i in 0..t.len() {
            slots.push(Slot::Input(k, i));
        }
        analytic.extend_from_slice(g.data());
    }
    for (k, p) in model.params().into_iter().enumerate() {
        let g = tape.param_grad(p).unwrap_or_else(|| Tensor::zeros(p.value().shape().to_vec()));
        for i in 0..p.numel() {
            slots.push(Slot::Param(k, i));
        }
        analytic.extend_from_slice(g.data());
    }

    let mut probe = inputs.to_vec();
    let at = |slot: Slot, delta: f64, probe: &mut Vec<Tensor>, model: &mut M| -> Result<Eval> {
        let x0 = poke(probe, model, slot, None);
        poke(probe, model, slot, Some(x0 + delta));
        let e = evaluate(f, probe, model, seed);
        poke(probe, model, slot, Some(x0));
        e
    };
    let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
    let (mut compared, mut skipped) = (0, 0);
    for (&slot, &a) in slots.iter().zip(&analytic) {
        if at(slot, config.kink_margin, &mut probe, model)?.signature != base
            || at(slot, -config.kink_margin, &mut probe, model)?.signature != base
        {
            skipped += 1;
            continue;
        }
        let plus = at(slot, config.step, &mut probe, model)?.loss;
        let minus = at(slot, -config.step, &mut probe, model)?.loss;
        let numeric = (plus - minus) / (2.0 * config.step);
        diff_sq += (a - numeric).powi(2);
        a_sq += a * a;
        n_sq += numeric * numeric;
        compared += 1;
    }
    let scale = a_sq.sqrt().max(n_sq.sqrt());
    let rel = if scale == 0.0 { 0.0 } else { diff_sq.sqrt() / scale };
    Ok((rel, compared, skipped))
}

/// Runs a case at `config.points` random points drawn by `sample`.
pub fn check<M, S, F>(name: &str, config: &GradCheckConfig, mut sample: S, f: F) -> Result<CheckReport>
where
    M: Parameterized,
    S: FnMut(&mut ChaCha8Rng) -> Result<(Vec<Tensor>, M)>,
    F: for<'t> Fn(&'t Tape, &[Var<'t>], &M) -> Result<Var<'t>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ name_hash(name));
    let mut worst: f64 = 0.0;
    let (mut compared, mut skipped) = (0, 0);
    for p in 0..config.points {
        let (inputs, mut model) = sample(&mut rng)?;
        let (rel, c, s) = check_point(&f, &inputs, &mut model, config, rng.gen())?;
        log::debug!("{name} point {p}: rel error {rel:.3e} over {c} coordinates ({s} skipped)");
        worst = worst.max(rel);
        compared += c;
        skipped += s;
    }
    if compared == 0 {
        return Err(contract!("check {name} compared no coordinates"));
    }
    Ok(CheckReport {
        name: name.to_string(),
        points: config.points,
        coordinates: compared,
        skipped,
        max_rel_error: worst,
        passed: worst <= config.tolerance,
    })
}

fn name_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Uniform random tensor on `(-scale, scale)`.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// Overwrites every parameter, biases included, with uniform noise.
pub fn randomize<M: Parameterized>(model: &mut M, rng: &mut ChaCha8Rng, scale: f64) {
    for p in model.params_mut() {
        for v in p.value_mut().data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn check_activation(kind: ActivationKind, config: &GradCheckConfig) -> Result<CheckReport> {
    let arity = if kind.is_dual() { 2 } else { 1 };
    let name = match kind.alpha() {
        Some(a) if a != 1.0 => format!("activation {} alpha={a}", kind.tag()),
        _ => format!("activation {}", kind.tag()),
    };
    check(
        &name,
        config,
        |rng| Ok(((0..arity).map(|_| random_tensor(rng, &[8], 3.0)).collect::<Result<_>>()?, ())),
        move |_, v, _| kind.apply(v[0], v.get(1).copied()),
    )
}

/// A layer plus the (detached) state it starts from.
#[derive(Clone, Debug)]
pub struct QrnnCase {
    pub layer: QrnnLayer,
    pub state: QrnnState,
}

impl Parameterized for QrnnCase {
    fn params(&self) -> Vec<&Param> {
        self.layer.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layer.params_mut()
    }
}

pub fn check_qrnn_layer(activation: ActivationKind, config: &GradCheckConfig) -> Result<CheckReport> {
    let (batch, steps, d_in, d_h, n) = (2, 4, 3, 3, 2);
    check(
        &format!("qrnn layer {}", activation.tag()),
        config,
        |rng| {
            let mut layer = QrnnLayer::new("check", n, d_in, d_h, activation, InitScheme::Orthogonal, rng)?;
            randomize(&mut layer, rng, 0.8);
            let state = QrnnState {
                cell: random_tensor(rng, &[batch, d_h], 1.0)?,
                history: random_tensor(rng, &[batch, n - 1, d_in], 1.0)?,
            };
            let x = random_tensor(rng, &[batch, steps, d_in], 1.0)?;
            Ok((vec![x], QrnnCase { layer, state }))
        },
        |tape, v, case: &QrnnCase| {
            let out = case.layer.forward(tape, v[0], &case.state)?;
            Var::concat(&[out.hidden, out.cells], 2)
        },
    )
}

pub fn check_lstm(config: &GradCheckConfig) -> Result<CheckReport> {
    let (batch, steps, d_in, d_h) = (2, 4, 3, 3);
    check(
        "lstm cell",
        config,
        |rng| {
            let mut cell = LstmCell::new("check", d_in, d_h, InitScheme::Orthogonal, rng)?;
            randomize(&mut cell, rng, 0.8);
            Ok((vec![random_tensor(rng, &[batch, steps, d_in], 1.0)?], cell))
        },
        |tape, v, cell: &LstmCell| {
            let state = LstmState {
                hidden: Tensor::full([batch, d_h], 0.3),
                cell: Tensor::full([batch, d_h], -0.2),
            };
            Ok(cell.forward(tape, v[0], &state)?.hidden)
        },
    )
}

/// Small dense stack used by the standard suite.
pub fn small_stack(layers: usize, activation: ActivationKind, dense: bool) -> StackConfig {
    StackConfig {
        layers,
        input_size: 2,
        hidden_size: 3,
        first_conv_width: 2,
        conv_width: 2,
        activation,
        dropout: 0.0,
        dense,
        init: InitScheme::Orthogonal,
    }
}

/// Whole stack from zero state over a `[2, 3, d_in]` input. Keep the sizes
/// small: the cost grows with the parameter count.
pub fn check_stack(stack_config: &StackConfig, config: &GradCheckConfig) -> Result<CheckReport> {
    let (batch, steps) = (2, 3);
    let d_in = stack_config.input_size;
    let name = format!(
        "{}stack {}x{} {}",
        if stack_config.dense { "dense " } else { "" },
        stack_config.layers,
        stack_config.hidden_size,
        stack_config.activation.tag()
    );
    check(
        &name,
        config,
        |rng| {
            let mut stack = QrnnStack::new(stack_config.clone(), rng)?;
            randomize(&mut stack, rng, 0.8);
            Ok((vec![random_tensor(rng, &[batch, steps, d_in], 1.0)?], stack))
        },
        |tape, v, stack: &QrnnStack| {
            let out = stack.forward(tape, v[0], &stack.zero_states(batch), None)?;
            Ok(out.output)
        },
    )
}

pub fn check_softmax_cross_entropy(config: &GradCheckConfig) -> Result<CheckReport> {
    check(
        "softmax cross-entropy",
        config,
        |rng| {
            let targets = (0..4).map(|_| rng.gen_range(0..7)).collect();
            Ok((vec![random_tensor(rng, &[4, 7], 3.0)?], Labels(targets)))
        },
        |_, v, labels: &Labels| v[0].softmax_cross_entropy(&labels.0),
    )
}

/// Matmul, bias, concat, narrow, reshape, windows, products and reductions
/// chained into one expression.
pub fn check_tensor_ops(config: &GradCheckConfig) -> Result<CheckReport> {
    check(
        "tensor ops",
        config,
        |rng| {
            Ok((
                vec![
                    random_tensor(rng, &[2, 3, 2], 1.0)?,
                    random_tensor(rng, &[4, 3], 1.0)?,
                    random_tensor(rng, &[3], 1.0)?,
                    random_tensor(rng, &[2, 1, 2], 1.0)?,
                ],
                (),
            ))
        },
        |_, v, _| {
            let padded = Var::concat(&[v[3], v[0]], 1)?;
            let proj = padded.windows(2)?.matmul(v[1])?.add_bias(v[2])?;
            let gated = proj.mul(proj.affine(0.5, 1.0)?)?;
            let other = proj.sub(gated.scale(2.0)?)?.one_minus()?;
            let joined = Var::concat(&[gated, other], 0)?.reshape([6, 6])?;
            let scaled = joined.mul(joined.mean()?)?;
            Var::concat(&[scaled.narrow(0, 1, 4)?, joined.narrow(1, 2, 3)?.reshape([3, 6])?], 0)
        },
    )
}

pub fn check_forget_scan(config: &GradCheckConfig) -> Result<CheckReport> {
    check(
        "forget scan",
        config,
        |rng| {
            Ok((
                vec![
                    random_tensor(rng, &[2, 5, 3], 2.0)?,
                    random_tensor(rng, &[2, 5, 3], 1.0)?,
                    random_tensor(rng, &[2, 3], 1.0)?,
                ],
                (),
            ))
        },
        |_, v, _| crate::activations::sigmoid(v[0])?.forget_scan(v[1], v[2]),
    )
}

pub fn check_embedding(config: &GradCheckConfig) -> Result<CheckReport> {
    check(
        "embedding",
        config,
        |rng| {
            let ids = (0..6).map(|_| rng.gen_range(0..5)).collect();
            Ok((vec![random_tensor(rng, &[5, 3], 1.0)?], Labels(ids)))
        },
        |_, v, ids: &Labels| v[0].embedding(&ids.0),
    )
}

/// Every activation, the QRNN layer with single and dual candidates, the
/// LSTM, a dense stack, softmax cross-entropy and the tensor ops.
pub fn standard_suite(config: &GradCheckConfig) -> Result<Vec<CheckReport>> {
    use ActivationKind::*;
    let mut out = Vec::new();
    for kind in [
        Tanh,
        Sigmoid,
        Relu,
        Elu { alpha: 1.0 },
        Elu { alpha: 0.5 },
        DRelu,
        Delu { alpha: 1.0 },
        Delu { alpha: 0.5 },
    ] {
        out.push(check_activation(kind, config)?);
    }
    for kind in [Tanh, Relu, DRelu, Delu { alpha: 1.0 }] {
        out.push(check_qrnn_layer(kind, config)?);
    }
    out.push(check_lstm(config)?);
    out.push(check_stack(&small_stack(2, DRelu, false), config)?);
    out.push(check_stack(&small_stack(2, DRelu, true), config)?);
    out.push(check_softmax_cross_entropy(config)?);
    out.push(check_tensor_ops(config)?);
    out.push(check_forget_scan(config)?);
    out.push(check_embedding(config)?);
    Ok(out)
}
