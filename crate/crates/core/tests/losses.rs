use llrn::losses::{
    choose_pool_kernel, combine, pred_bpf_loss, pred_loss, sim_bpf_loss, sim_loss, similarity_matrix, LabelBatch,
    SimHead, TargetProjection,
};
use llrn::numerics::{Rng, Tensor};
use llrn::Error;
use proptest::prelude::*;

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

#[test]
fn two_orthogonal_vectors() {
    let x = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
    let s = similarity_matrix(&x).unwrap();
    for (got, want) in s.as_tensor().data().iter().zip([1.0, -1.0, -1.0, 1.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!(matches!(similarity_matrix(&Tensor::<f64>::zeros(&[1, 3])), Err(Error::Input(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn similarity_laws(n in 2usize..12, d in 2usize..10, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = randn(&[n, d], &mut rng);
        let s = similarity_matrix(&x).unwrap();
        for i in 0..n {
            prop_assert!((s.get(i, i) - 1.0).abs() < 1e-9);
            for j in 0..n {
                prop_assert!(s.get(i, j) == s.get(j, i));
                prop_assert!(s.get(i, j).abs() <= 1.0 + 1e-12);
            }
        }
        let mut y = x.clone();
        for i in 0..n {
            let a = rng.uniform_range(0.1, 10.0);
            let b = rng.uniform_range(-5.0, 5.0);
            for v in y.row_mut(i) {
                *v = a * *v + b;
            }
        }
        let t = similarity_matrix(&y).unwrap();
        for (p, q) in s.as_tensor().data().iter().zip(t.as_tensor().data()) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn one_hot_law(classes in 2usize..12, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let labels: Vec<usize> = (0..10).map(|_| rng.below(classes)).collect();
        let s = LabelBatch::new(labels.clone(), classes).unwrap().target_similarity::<f64>().unwrap();
        let cross = -1.0 / (classes as f64 - 1.0);
        for i in 0..10 {
            for j in 0..10 {
                let want = if labels[i] == labels[j] { 1.0 } else { cross };
                prop_assert!((s.get(i, j) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn three_class_cross_similarity() {
    let s = LabelBatch::new(vec![0, 1, 2, 0], 3).unwrap().target_similarity::<f64>().unwrap();
    assert!((s.get(0, 1) + 0.5).abs() < 1e-12);
    assert!((s.get(0, 3) - 1.0).abs() < 1e-12);
}

#[test]
fn sim_head_matching_labels_gives_zero() {
    let y = LabelBatch::new(vec![0, 2, 1, 1, 0], 3).unwrap();
    let h: Tensor<f64> = y.one_hot();
    let out = sim_loss(&h, &y.target_similarity().unwrap(), SimHead::Dense(&Tensor::identity(3))).unwrap();
    assert!(out.loss < 1e-24);
    let same = LabelBatch::new(vec![1, 1, 1], 3).unwrap();
    let h = Tensor::from_fn(&[3, 2, 4, 4], |i| ((i % 32) as f64).sqrt());
    let k = randn(&[2, 2, 3, 3], &mut Rng::new(2));
    let out = sim_loss(&h, &same.target_similarity().unwrap(), SimHead::Conv(&k)).unwrap();
    assert!(out.loss < 1e-20);
}

#[test]
fn pool_kernel_examples() {
    assert_eq!(choose_pool_kernel(128, 16, 2048), 4);
    assert_eq!(choose_pool_kernel(1024, 1, 1024), 1);
    assert_eq!(choose_pool_kernel(512, 8, 1024), 4);
    assert_eq!(choose_pool_kernel(8, 4, 1024), 4, "falls back to global pooling");
}

#[test]
fn zero_classifiers() {
    let mut rng = Rng::new(3);
    let y = LabelBatch::new(vec![0, 4, 9, 9], 10).unwrap();
    let h = randn(&[4, 6], &mut rng);
    let out = pred_loss(&h, &y, &Tensor::zeros(&[6, 10]), &Tensor::zeros(&[10]), 1).unwrap();
    assert!((out.loss - 2.302585).abs() < 1e-6);
    assert!(matches!(
        pred_loss(&h, &y, &Tensor::zeros(&[5, 10]), &Tensor::zeros(&[10]), 1),
        Err(Error::Config(_))
    ));
    let p = TargetProjection::<f64>::new(32, 10, &mut rng);
    let fb = randn(&[6, 32], &mut rng);
    let out = pred_bpf_loss(&h, &y, &Tensor::zeros(&[6, 32]), &Tensor::zeros(&[32]), &fb, &p, 1).unwrap();
    assert!((out.loss - 0.6931).abs() < 1e-4);
}

#[test]
fn feedback_swap_changes_only_the_input_gradient() {
    let mut rng = Rng::new(4);
    let y = LabelBatch::new(vec![0, 1, 2, 1, 0, 2], 3).unwrap();
    let h = randn(&[6, 2, 4, 4], &mut rng);
    let p = TargetProjection::<f64>::new(16, 3, &mut rng);
    let w = randn(&[8, 16], &mut rng);
    let b = randn(&[16], &mut rng);
    let b1 = randn(&[8, 16], &mut rng);
    let b2 = randn(&[8, 16], &mut rng);
    let o1 = pred_bpf_loss(&h, &y, &w, &b, &b1, &p, 2).unwrap();
    let o2 = pred_bpf_loss(&h, &y, &w, &b, &b2, &p, 2).unwrap();
    assert_eq!(o1.grad_w, o2.grad_w);
    assert_eq!(o1.grad_b, o2.grad_b);
    assert_eq!(o1.loss, o2.loss);
    assert_ne!(o1.grad_h, o2.grad_h);
}

#[test]
fn sim_bpf_targets() {
    let mut rng = Rng::new(5);
    let p = TargetProjection::<f64>::new(64, 4, &mut rng);
    let y = LabelBatch::new(vec![2, 2, 0], 4).unwrap();
    let yp = p.project(&y).unwrap();
    assert!((similarity_matrix(&yp).unwrap().get(0, 1) - 1.0).abs() < 1e-12);
    let (l, g) = sim_bpf_loss(&yp, &yp).unwrap();
    assert!(l < 1e-24 && g.max_abs() < 1e-10);
}

#[test]
fn combine_examples() {
    let g = Tensor::<f64>::zeros(&[3]);
    assert!((combine((1.0, &g), (2.0, &g), 0.99).unwrap().0 - 1.99).abs() < 1e-12);
    assert_eq!(combine((1.0, &g), (2.0, &g), 0.0).unwrap().0, 1.0);
    assert_eq!(combine((1.0, &g), (2.0, &g), 1.0).unwrap().0, 2.0);
    assert!(matches!(combine((1.0, &g), (2.0, &g), -0.5), Err(Error::Config(_))));
}
