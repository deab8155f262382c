use dqrnn::layers::{InitScheme, StackConfig};
use dqrnn::lm::{bpc, evaluate, run_inference, synthetic_text, BatchStream, CharVocab, LmModel, UNKNOWN};
use dqrnn::{ActivationKind, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_stack(activation: ActivationKind) -> StackConfig {
    StackConfig {
        layers: 2,
        input_size: 6,
        hidden_size: 8,
        first_conv_width: 3,
        conv_width: 2,
        activation,
        dropout: 0.0,
        dense: false,
        init: InitScheme::Orthogonal,
    }
}

#[test]
fn targets_are_inputs_shifted_by_one() {
    let ids: Vec<usize> = (0..100).collect();
    let mut stream = BatchStream::new(ids, 4, 5).unwrap();
    let offsets = stream.lane_offsets();
    assert_eq!(offsets, vec![0, 25, 50, 75]);
    let first = stream.next_batch();
    let second = stream.next_batch();
    for lane in 0..4 {
        let row = &first.inputs[lane * 5..lane * 5 + 5];
        let tgt = &first.targets[lane * 5..lane * 5 + 5];
        assert_eq!(row[0], offsets[lane]);
        for t in 0..5 {
            assert_eq!(tgt[t], row[t] + 1);
        }
        assert_eq!(second.inputs[lane * 5], row[4] + 1, "lane continues");
    }
}

#[test]
fn stream_wraps_and_seek_matches_drawing() {
    let ids: Vec<usize> = (0..64).collect();
    let mut drawn = BatchStream::new(ids.clone(), 2, 5).unwrap();
    let per_epoch = drawn.segments_per_epoch();
    assert_eq!(per_epoch, 6);
    let mut wraps = 0;
    for k in 0..20u64 {
        let mut sought = BatchStream::new(ids.clone(), 2, 5).unwrap();
        sought.seek(k);
        let a = drawn.next_batch();
        let b = sought.next_batch();
        assert_eq!(a.inputs, b.inputs, "segment {k}");
        wraps += usize::from(a.wrapped);
    }
    assert_eq!(wraps, 3);
    assert!(BatchStream::new(vec![0; 10], 2, 5).is_err());
}

#[test]
fn vocab_round_trip_and_unknown() {
    let vocab = CharVocab::build_with_unknown("hello world").unwrap();
    assert_eq!(vocab.len(), 9);
    let ids = vocab.encode("hold").unwrap();
    assert_eq!(vocab.decode(&ids).unwrap(), "hold");
    let unk = vocab.encode("hz").unwrap();
    assert_eq!(unk[1], vocab.unknown_id().unwrap());
    assert_eq!(vocab.symbol(unk[1]), Some(UNKNOWN));
    assert_eq!(CharVocab::from_text(&vocab.to_text()).unwrap(), vocab);
    assert!(CharVocab::build("abc").unwrap().encode("abd").is_err());
    assert!(CharVocab::build("").is_err());
}

#[test]
fn bpc_is_nats_over_ln2() {
    assert_eq!(bpc(0.0).unwrap(), 0.0);
    assert!((bpc(std::f64::consts::LN_2).unwrap() - 1.0).abs() < 1e-15);
    assert!(bpc(-1.0).is_err());
}

#[test]
fn zero_output_layer_scores_log2_of_the_vocabulary() {
    let text = synthetic_text(0, 2_000);
    let vocab = CharVocab::build_with_unknown(&text).unwrap();
    let ids = vocab.encode(&text).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = LmModel::new(vocab.len(), small_stack(ActivationKind::DRelu), &mut rng).unwrap();
    model.output_weight.value_mut().fill(0.0);
    let result = evaluate(&model, &ids, 64).unwrap();
    assert_eq!(result.predictions, ids.len() - 1);
    assert!((result.bpc - (vocab.len() as f64).log2()).abs() < 1e-12);
}

#[test]
fn inference_in_segments_equals_one_long_segment() {
    let text = synthetic_text(1, 1_000);
    let vocab = CharVocab::build_with_unknown(&text).unwrap();
    let ids = vocab.encode(&text).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = LmModel::new(vocab.len(), small_stack(ActivationKind::Delu { alpha: 1.0 }), &mut rng).unwrap();
    let short = evaluate(&model, &ids, 37).unwrap();
    let long = evaluate(&model, &ids, ids.len()).unwrap();
    assert!((short.total_nats - long.total_nats).abs() <= 1e-10 * long.total_nats);

    let mut cells_short = Vec::new();
    run_inference(&model, &ids, 37, |seg| cells_short.extend_from_slice(seg.cells[1].data())).unwrap();
    let mut cells_long = Vec::new();
    run_inference(&model, &ids, ids.len(), |seg| cells_long.extend_from_slice(seg.cells[1].data())).unwrap();
    assert_eq!(cells_short.len(), cells_long.len());
    for (a, b) in cells_short.iter().zip(&cells_long) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn forward_rejects_bad_layouts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = LmModel::new(5, small_stack(ActivationKind::Tanh), &mut rng).unwrap();
    let tape = Tape::new();
    assert!(model.forward(&tape, &[0, 1, 2], 2, &model.zero_states(2), None).is_err());
    assert!(evaluate(&model, &[0, 9], 4).is_err());
    assert!(evaluate(&model, &[0], 4).is_err());
}
