use llrn::layers::{adam_step, AdamState, BlockKind, BlockSpec, CacheTracker, Checkpoint, LayerBlock};
use llrn::losses::{LabelBatch, LossConfig, LossMode};
use llrn::numerics::{ConvGeometry, Mode, Rng, Tensor};
use llrn::Error;

fn dense(inputs: usize, outputs: usize, mode: LossMode) -> BlockSpec {
    BlockSpec {
        kind: BlockKind::Dense { inputs, outputs },
        pool_after: false,
        slope: mode.default_slope(),
        dropout: 0.0,
        classes: 10,
        loss: LossConfig::new(mode),
    }
}

#[test]
fn init_rule_for_784_to_1024() {
    let b = LayerBlock::<f32>::init_params(dense(784, 1024, LossMode::PredSim), &mut Rng::new(0)).unwrap();
    assert_eq!(b.weight.value.shape(), &[784, 1024]);
    let bound = (1.0f32 / 784.0).sqrt();
    assert!(b.weight.value.data().iter().all(|w| w.abs() < bound));
    assert!(b.bias.value.data().iter().all(|&v| v == 0.0));
    assert!(b.pred.as_ref().unwrap().bias.value.data().iter().all(|&v| v == 0.0));
    assert!(b.gamma.value.data().iter().all(|&v| v == 1.0));
    let again = LayerBlock::<f32>::init_params(dense(784, 1024, LossMode::PredSim), &mut Rng::new(0)).unwrap();
    assert_eq!(b.named_tensors(), again.named_tensors());
    assert!(matches!(
        LayerBlock::<f32>::init_params(dense(0, 4, LossMode::Pred), &mut Rng::new(0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn heads_follow_the_mode() {
    let mk = |m| LayerBlock::<f64>::init_params(dense(6, 5, m), &mut Rng::new(1)).unwrap();
    assert!(mk(LossMode::Glob).pred.is_none() && mk(LossMode::Glob).sim_head.is_none());
    assert!(mk(LossMode::SimBpf).sim_head.is_none(), "sim-bpf has no trainable head");
    let b = mk(LossMode::PredBpf);
    let head = b.pred.as_ref().unwrap();
    assert_eq!(head.feedback.as_ref().unwrap().shape(), head.weight.value.shape());
    assert_eq!(head.weight.value.shape(), &[5, 128]);
    let conv = BlockSpec {
        kind: BlockKind::Conv { in_channels: 2, out_channels: 4, height: 4, width: 4, geom: ConvGeometry::SAME3 },
        ..dense(1, 1, LossMode::Sim)
    };
    let b = LayerBlock::<f64>::init_params(conv, &mut Rng::new(1)).unwrap();
    assert_eq!(b.sim_head.as_ref().unwrap().value.shape(), &[4, 4, 3, 3]);
}

#[test]
fn forward_determinism_and_eval_independence() {
    let mut spec = dense(4, 4, LossMode::Pred);
    spec.dropout = 0.2;
    let mut b = LayerBlock::<f64>::init_params(spec, &mut Rng::new(2)).unwrap();
    let x = Tensor::from_fn(&[6, 4], |i| (i as f64 * 0.37).sin());
    let e1 = b.forward(x.clone(), Mode::Eval, &mut Rng::new(1)).unwrap().0;
    let e2 = b.forward(x.clone(), Mode::Eval, &mut Rng::new(99)).unwrap().0;
    assert_eq!(e1, e2);
    let mut b2 = b.clone();
    let t1 = b.forward(x.clone(), Mode::Train, &mut Rng::new(5)).unwrap().0;
    let t2 = b2.forward(x, Mode::Train, &mut Rng::new(5)).unwrap().0;
    assert_eq!(t1, t2);
}

#[test]
fn identity_block_is_relu_on_standardized_input() {
    let mut spec = dense(4, 4, LossMode::Pred);
    spec.slope = 0.0;
    let mut b = LayerBlock::<f64>::init_params(spec, &mut Rng::new(3)).unwrap();
    b.weight.value = Tensor::identity(4);
    // Each column is a permutation of ±1, ±1: mean 0, variance 1.
    let x = Tensor::from_f64(&[4, 4], &[1., -1., 1., 1., -1., 1., -1., 1., 1., 1., -1., -1., -1., -1., 1., -1.]).unwrap();
    let (y, _) = b.forward(x.clone(), Mode::Train, &mut Rng::new(0)).unwrap();
    for (a, v) in y.data().iter().zip(x.data()) {
        assert!((a - v.max(0.0)).abs() < 1e-3);
    }
}

#[test]
fn zero_upstream_gives_zero_grads() {
    let mut b = LayerBlock::<f64>::init_params(dense(3, 4, LossMode::Glob), &mut Rng::new(4)).unwrap();
    let x = Tensor::from_fn(&[5, 3], |i| (i as f64).cos());
    let (y, cache) = b.forward(x, Mode::Train, &mut Rng::new(0)).unwrap();
    let labels = LabelBatch::new(vec![0, 1, 2, 3, 4], 10).unwrap();
    let bw = b.backward(&cache, &labels, Some(&Tensor::zeros(y.shape())), true).unwrap();
    for (_, g) in bw.grads.tensors() {
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
    assert!(bw.input_grad.unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn stale_cache_and_local_upstream_rejected() {
    let mut b = LayerBlock::<f64>::init_params(dense(3, 4, LossMode::Pred), &mut Rng::new(5)).unwrap();
    let labels = LabelBatch::new(vec![0, 1, 0, 1], 10).unwrap();
    let (y, cache) = b.forward(Tensor::from_fn(&[4, 3], |i| i as f64 * 0.1), Mode::Train, &mut Rng::new(0)).unwrap();
    assert!(matches!(b.backward(&cache, &labels, Some(&y), false), Err(Error::Usage(_))));
    let bw = b.local_backward(&cache, &labels).unwrap();
    b.apply_grads(&bw.grads, 1e-3).unwrap();
    assert!(matches!(b.local_backward(&cache, &labels), Err(Error::Usage(_))));
}

#[test]
fn tracker_counts_live_caches() {
    let tracker = CacheTracker::new();
    let mut b = LayerBlock::<f64>::init_params(dense(3, 4, LossMode::Pred), &mut Rng::new(6)).unwrap();
    b.attach_tracker(tracker.clone());
    let x = Tensor::from_fn(&[4, 3], |i| i as f64);
    let (_, c1) = b.forward(x.clone(), Mode::Train, &mut Rng::new(0)).unwrap();
    let (_, c2) = b.forward(x, Mode::Train, &mut Rng::new(0)).unwrap();
    assert_eq!(tracker.live(), 2);
    drop(c1);
    drop(c2);
    assert_eq!((tracker.live(), tracker.peak()), (0, 2));
}

#[test]
fn adam_cases() {
    let mut p = Tensor::<f64>::zeros(&[1]);
    let mut st = AdamState::new(&[1]);
    adam_step(&mut p, &Tensor::full(&[1], 1.0), &mut st, 1e-3).unwrap();
    assert!((p.data()[0] + 1e-3).abs() < 1e-9);
    assert_eq!(st.t, 1);
    let mut q = Tensor::<f64>::zeros(&[1]);
    adam_step(&mut q, &Tensor::zeros(&[1]), &mut AdamState::new(&[1]), 1e-3).unwrap();
    assert_eq!(q.data()[0], 0.0);
    let mut bad = Tensor::<f64>::zeros(&[1]);
    assert!(matches!(
        adam_step(&mut bad, &Tensor::full(&[1], f64::NAN), &mut AdamState::new(&[1]), 1e-3),
        Err(Error::NonFinite(_))
    ));
}

#[test]
fn checkpoint_round_trip_and_truncation() {
    let b = LayerBlock::<f32>::init_params(dense(5, 3, LossMode::PredSimBpf), &mut Rng::new(7)).unwrap();
    let mut ck = Checkpoint::new(1);
    for (name, t) in b.named_tensors() {
        ck.push(format!("block0.{}", name), t);
    }
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..4], b"LLRN");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.get("block0.pred.feedback").unwrap(), b.pred.as_ref().unwrap().feedback.as_ref().unwrap());
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
}
