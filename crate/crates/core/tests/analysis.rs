use dqrnn::analysis::{
    cell_state_stats, exploding_state_demo, gradient_depth_probe, probe_readout, rollout, ActivationStats,
    MatrixFamily,
};
use dqrnn::gradcheck::{check, GradCheckConfig};
use dqrnn::layers::{InitScheme, QrnnStack, StackConfig};
use dqrnn::lm::{synthetic_text, CharVocab, LmModel};
use dqrnn::{ActivationKind, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stack_config(layers: usize, activation: ActivationKind) -> StackConfig {
    StackConfig {
        layers,
        input_size: 3,
        hidden_size: 3,
        first_conv_width: 2,
        conv_width: 2,
        activation,
        dropout: 0.0,
        dense: false,
        init: InitScheme::Orthogonal,
    }
}

proptest! {
    #[test]
    fn stats_fractions_sum_to_one(values in prop::collection::vec(-1.0f64..1.0, 1..200), tau in 0.01f64..0.5) {
        let s = ActivationStats::of(&values, tau).unwrap();
        prop_assert!((s.near_zero + s.negative + s.positive - 1.0).abs() <= 1e-12);
        prop_assert_eq!(s.samples, values.len() as u64);
    }
}

#[test]
fn relu_model_has_no_negative_cells_and_fractions_sum_to_one() {
    let text = synthetic_text(5, 3_000);
    let vocab = CharVocab::build_with_unknown(&text).unwrap();
    let ids = vocab.encode(&text).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for act in [ActivationKind::Relu, ActivationKind::DRelu, ActivationKind::Tanh] {
        let mut cfg = stack_config(2, act);
        cfg.input_size = 8;
        cfg.hidden_size = 16;
        let model = LmModel::new(vocab.len(), cfg, &mut rng).unwrap();
        let stats = cell_state_stats(&model, &ids, 50, 0.1).unwrap();
        assert_eq!(stats.len(), 2);
        for s in &stats {
            assert!((s.near_zero + s.negative + s.positive - 1.0).abs() <= 1e-12);
            assert_eq!(s.samples, ((ids.len() - 1) * 16) as u64);
            if act == ActivationKind::Relu {
                assert_eq!(s.negative, 0.0);
            }
        }
    }
    let model = LmModel::new(vocab.len(), stack_config(1, ActivationKind::Tanh), &mut rng);
    assert!(cell_state_stats(&model.unwrap(), &[], 10, 0.1).is_err());
}

#[test]
fn tanh_trajectories_are_bounded() {
    for seed in 0..20 {
        let t = exploding_state_demo(ActivationKind::Tanh, 1.1, 100, 32, MatrixFamily::Orthogonal, seed).unwrap();
        assert_eq!(t.l2.len(), 101);
        assert!(t.max_abs.iter().all(|&m| m <= 1.0));
        assert!(t.l2.iter().all(|&n| n <= (32f64).sqrt()));
    }
}

#[test]
fn identity_recurrence_grows_in_closed_form() {
    let mut w = Tensor::eye(32);
    w.scale(1.1);
    let t = rollout(ActivationKind::Relu, w, Tensor::ones([32]), 100).unwrap();
    let expected = 1.1f64.powi(100);
    assert!((t.growth() - expected).abs() <= 1e-10 * expected);
}

#[test]
fn demo_is_deterministic_per_seed() {
    let a = exploding_state_demo(ActivationKind::Relu, 1.1, 50, 16, MatrixFamily::Orthogonal, 4).unwrap();
    let b = exploding_state_demo(ActivationKind::Relu, 1.1, 50, 16, MatrixFamily::Orthogonal, 4).unwrap();
    assert_eq!(a, b);
    assert!(exploding_state_demo(ActivationKind::Relu, 0.0, 5, 4, MatrixFamily::Orthogonal, 0).is_err());
}

#[test]
fn single_layer_probe_ratio_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stack = QrnnStack::new(stack_config(1, ActivationKind::DRelu), &mut rng).unwrap();
    let x = Tensor::new([1, 4, 3], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
    let p = gradient_depth_probe(&stack, &x, 0).unwrap();
    assert_eq!(p.norms.len(), 1);
    assert_eq!(p.ratio(), 1.0);
}

/// DReLU with a zero b-stream and non-negative a-stream weights is the
/// identity on non-negative inputs, so the stack is smooth everywhere the
/// probe looks and every layer's input gradient can be checked against
/// finite differences of the remaining sub-stack.
#[test]
fn linear_stack_probe_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut stack = QrnnStack::new(stack_config(4, ActivationKind::DRelu), &mut rng).unwrap();
    for l in &mut stack.layers {
        for v in l.candidates[0].weight.value_mut().data_mut() {
            *v = v.abs();
        }
        l.candidates[1].weight.value_mut().fill(0.0);
    }
    let x = Tensor::new([1, 4, 3], (0..12).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
    let probe = gradient_depth_probe(&stack, &x, 9).unwrap();

    let tape = Tape::new();
    let out = stack.forward(&tape, tape.constant(x.clone()), &stack.zero_states(1), None).unwrap();
    let readout = probe_readout(&out.output.shape(), 9).unwrap();
    for i in 0..4 {
        let input = out.layer_inputs[i].value();
        assert!(input.data().iter().all(|&v| v >= 0.0));
        let mut tail = stack.clone();
        tail.layers = stack.layers[i..].to_vec();
        tail.config.layers = 4 - i;
        let loss = |t: &Tensor| {
            let tape = Tape::new();
            let o = tail.forward(&tape, tape.constant(t.clone()), &tail.zero_states(1), None).unwrap();
            o.output.value().data().iter().zip(readout.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-5;
        let mut sq = 0.0;
        for k in 0..input.len() {
            let mut p = input.clone();
            p.data_mut()[k] += h;
            let mut m = input.clone();
            m.data_mut()[k] -= h;
            sq += ((loss(&p) - loss(&m)) / (2.0 * h)).powi(2);
        }
        let fd = sq.sqrt();
        assert!((probe.norms[i] - fd).abs() <= 1e-7 * fd, "layer {i}: {} vs {fd}", probe.norms[i]);
    }
}

#[test]
fn gradcheck_skips_coordinates_at_a_kink() {
    let config = GradCheckConfig {
        points: 3,
        ..GradCheckConfig::default()
    };
    let report = check(
        "relu at zero",
        &config,
        |_| Ok((vec![Tensor::new([4], vec![0.0, 1.0, -1.0, 5e-5]).unwrap()], ())),
        |_, v, _| dqrnn::activations::relu(v[0]),
    )
    .unwrap();
    assert!(report.passed);
    assert_eq!(report.skipped, 2 * 3);
    assert_eq!(report.coordinates, 2 * 3);
}

#[test]
fn gradcheck_detects_a_wrong_gradient() {
    use dqrnn::tensor::{BackwardCtx, Operation};
    #[derive(Debug)]
    struct WrongSquare;
    impl Operation for WrongSquare {
        fn name(&self) -> &'static str {
            "wrong_square"
        }
        fn forward(&mut self, inputs: &[&Tensor]) -> dqrnn::Result<Tensor> {
            Ok(inputs[0].map(|x| x * x))
        }
        fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Tensor>> {
            vec![Some(ctx.inputs[0].zip_map(ctx.grad, |x, g| 2.1 * x * g).unwrap())]
        }
    }
    let report = check(
        "wrong",
        &GradCheckConfig::default(),
        |rng| Ok((vec![dqrnn::gradcheck::random_tensor(rng, &[5], 1.0)?], ())),
        |tape, v, _| tape.apply(WrongSquare, &[v[0]]),
    )
    .unwrap();
    assert!(!report.passed);
    assert!(report.max_rel_error > 0.01);
}
