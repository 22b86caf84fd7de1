//! Finite-difference verification of every backward pass and every loss
//! mode, in `f64`.
//!
//! Each check compares an analytic gradient with central differences of a
//! scalar objective. Ops are checked through `L = Σ r ⊙ op(x)` for a fixed
//! random `r`; loss modes are checked end to end on toy networks.

use std::fmt;

use crate::error::Result;
use crate::layers::LayerBlock;
use crate::losses::{
    bce_with_logits, pred_loss, similarity_backward, similarity_matrix_cached, sim_loss, LabelBatch, LossConfig,
    LossMode, SimHead, TargetProjection,
};
use crate::numerics::conv::{conv2d_input_grad, conv2d_kernel_grad};
use crate::numerics::loss::cross_entropy_labels;
use crate::numerics::{
    avgpool, avgpool_backward, batchnorm, batchnorm_backward, conv2d, dropout, dropout_backward, leaky_relu,
    leaky_relu_backward, matmul, matmul_backward, maxpool2x2, maxpool2x2_backward, std_per_feature_map,
    std_per_feature_map_backward, ConvGeometry, Mode, Rng, RunningStats, Tensor,
};
use crate::trainer::{parse_arch, BlockSettings, Network, NetworkSpec};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: entries whose true gradient is below this are judged
/// on absolute error.
pub const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<6} {:<36} max_rel_err={:.3e} entries={}",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.entries
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub seed: u64,
    /// Negates the analytic gradient of every check whose name starts with
    /// this prefix. Exists to prove the harness notices a wrong sign.
    pub corrupt: Option<String>,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

struct Suite<'a> {
    opts: &'a Options,
    results: Vec<CheckResult>,
}

impl Suite<'_> {
    /// Compares `analytic` with central differences of `f` around `x`.
    fn check(&mut self, name: &str, x: &Tensor<f64>, analytic: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) {
        let sign = if self.corrupted(name) { -1.0 } else { 1.0 };
        let mut probe = x.clone();
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(sign * analytic.data()[i], numeric));
        }
        if !worst.is_finite() {
            worst = f64::INFINITY;
        }
        self.results.push(CheckResult { name: name.to_string(), max_rel_err: worst, entries: x.len() });
    }

    fn corrupted(&self, name: &str) -> bool {
        self.opts.corrupt.as_deref().is_some_and(|p| name.starts_with(p))
    }
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// Standard normal values pushed away from 0 so no probe crosses a kink.
fn randn_off_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.normal();
        v + 0.1 * v.signum()
    })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Runs the full suite. Errors only on internal failures; gradient
/// mismatches show up as failing [`CheckResult`]s.
pub fn run_suite(opts: &Options) -> Result<Vec<CheckResult>> {
    let mut suite = Suite { opts, results: Vec::new() };
    let mut rng = Rng::derive(opts.seed, 0x9c);
    check_ops(&mut suite, &mut rng)?;
    check_losses(&mut suite, &mut rng)?;
    for mode in LossMode::ALL {
        check_mode(&mut suite, mode, false, opts.seed)?;
        if mode != LossMode::Glob {
            check_mode(&mut suite, mode, true, opts.seed)?;
        }
    }
    Ok(suite.results)
}

fn check_ops(s: &mut Suite<'_>, rng: &mut Rng) -> Result<()> {
    // matmul
    let a = randn(&[4, 3], rng);
    let b = randn(&[3, 5], rng);
    let r = randn(&[4, 5], rng);
    let (da, db) = matmul_backward(&a, &b, &r)?;
    s.check("matmul/a", &a, &da, |a| dot(&matmul(a, &b).unwrap(), &r));
    s.check("matmul/b", &b, &db, |b| dot(&matmul(&a, b).unwrap(), &r));

    // conv2d, same padding and strided
    for (tag, geom) in [("3x3", ConvGeometry::SAME3), ("k3s2", ConvGeometry::new(3, 2, 1))] {
        let x = randn(&[2, 2, 5, 5], rng);
        let k = randn(&[3, 2, 3, 3], rng);
        let r = randn(conv2d(&x, &k, geom)?.shape(), rng);
        let dx = conv2d_input_grad(x.shape(), &k, geom, &r)?;
        let dk = conv2d_kernel_grad(&x, &k, geom, &r)?;
        s.check(&format!("conv2d/{}/input", tag), &x, &dx, |x| dot(&conv2d(x, &k, geom).unwrap(), &r));
        s.check(&format!("conv2d/{}/kernel", tag), &k, &dk, |k| dot(&conv2d(&x, k, geom).unwrap(), &r));
    }

    // max pool: distinct values spaced well beyond the probe step
    let mut perm = rng.permutation(2 * 2 * 4 * 4);
    rng.shuffle(&mut perm);
    let x = Tensor::from_fn(&[2, 2, 4, 4], |i| perm[i] as f64 * 0.01);
    let (y, arg) = maxpool2x2(&x)?;
    let r = randn(y.shape(), rng);
    s.check("maxpool2x2", &x, &maxpool2x2_backward(&r, &arg, x.shape())?, |x| dot(&maxpool2x2(x).unwrap().0, &r));

    let x = randn(&[2, 3, 4, 4], rng);
    let r = randn(&[2, 3, 2, 2], rng);
    s.check("avgpool", &x, &avgpool_backward(&r, 2, x.shape())?, |x| dot(&avgpool(x, 2).unwrap(), &r));

    // batchnorm, dense and conv, train and eval
    for (tag, shape) in [("dense", vec![5, 3]), ("conv", vec![3, 2, 2, 3])] {
        let c = shape[1];
        let x = randn(&shape, rng);
        let gamma = Tensor::from_fn(&[c], |_| 0.5 + rng.uniform());
        let beta = randn(&[c], rng);
        let r = randn(&shape, rng);
        for mode in [Mode::Train, Mode::Eval] {
            let mut running = RunningStats::new(c);
            running.mean = randn(&[c], rng);
            running.var = Tensor::from_fn(&[c], |_| 0.5 + rng.uniform());
            let frozen = running.clone();
            let bn = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
                let mut st = frozen.clone();
                dot(&batchnorm(x, g, b, &mut st, mode).unwrap().0, &r)
            };
            let (_, cache) = batchnorm(&x, &gamma, &beta, &mut running, mode)?;
            let (dx, dg, db) = batchnorm_backward(&r, &cache, &gamma)?;
            let m = if mode == Mode::Train { "train" } else { "eval" };
            s.check(&format!("batchnorm/{}/{}/input", tag, m), &x, &dx, |x| bn(x, &gamma, &beta));
            s.check(&format!("batchnorm/{}/{}/gamma", tag, m), &gamma, &dg, |g| bn(&x, g, &beta));
            s.check(&format!("batchnorm/{}/{}/beta", tag, m), &beta, &db, |b| bn(&x, &gamma, b));
        }
    }

    let x = randn_off_zero(&[4, 6], rng);
    let r = randn(&[4, 6], rng);
    s.check("leaky_relu", &x, &leaky_relu_backward(&r, &x, 0.01)?, |x| dot(&leaky_relu(x, 0.01), &r));

    let mask_seed = rng.next_u64();
    let (_, mask) = dropout(&x, 0.3, &mut Rng::new(mask_seed), Mode::Train)?;
    s.check("dropout", &x, &dropout_backward(&r, mask.as_ref())?, |x| {
        dot(&dropout(x, 0.3, &mut Rng::new(mask_seed), Mode::Train).unwrap().0, &r)
    });

    let x = randn(&[3, 2, 3, 3], rng);
    let sd = std_per_feature_map(&x)?;
    let r = randn(sd.shape(), rng);
    s.check("std_per_feature_map", &x, &std_per_feature_map_backward(&x, &sd, &r)?, |x| {
        dot(&std_per_feature_map(x).unwrap(), &r)
    });

    let x = randn(&[5, 4], rng);
    let (sm, cache) = similarity_matrix_cached(&x)?;
    let r = randn(sm.as_tensor().shape(), rng);
    s.check("similarity_matrix", &x, &similarity_backward(&cache, &r)?, |x| {
        dot(similarity_matrix_cached(x).unwrap().0.as_tensor(), &r)
    });

    let z = randn(&[5, 4], rng);
    let labels = [0usize, 3, 1, 1, 2];
    let (_, g) = cross_entropy_labels(&z, &labels)?;
    s.check("softmax_cross_entropy", &z, &g, |z| cross_entropy_labels(z, &labels).unwrap().0);

    let t = Tensor::from_fn(&[5, 4], |_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 });
    let (_, g) = bce_with_logits(&z, &t)?;
    s.check("bce_with_logits", &z, &g, |z| bce_with_logits(z, &t).unwrap().0);
    Ok(())
}

/// The loss functions on their own, with respect to the hidden activations
/// and the sub-network weights.
fn check_losses(s: &mut Suite<'_>, rng: &mut Rng) -> Result<()> {
    let labels = LabelBatch::new(vec![0, 1, 2, 1, 0, 2], 3)?;
    let target = labels.target_similarity()?;

    let h = randn(&[6, 4], rng);
    let w = randn(&[4, 4], rng);
    let out = sim_loss(&h, &target, SimHead::Dense(&w))?;
    s.check("loss/sim/dense/h", &h, &out.grad_h, |h| sim_loss(h, &target, SimHead::Dense(&w)).unwrap().loss);
    s.check("loss/sim/dense/head", &w, &out.grad_head, |w| sim_loss(&h, &target, SimHead::Dense(w)).unwrap().loss);

    let h = randn(&[6, 2, 3, 3], rng);
    let k = randn(&[2, 2, 3, 3], rng);
    let out = sim_loss(&h, &target, SimHead::Conv(&k))?;
    s.check("loss/sim/conv/h", &h, &out.grad_h, |h| sim_loss(h, &target, SimHead::Conv(&k)).unwrap().loss);
    s.check("loss/sim/conv/head", &k, &out.grad_head, |k| sim_loss(&h, &target, SimHead::Conv(k)).unwrap().loss);

    let h = randn(&[6, 2, 4, 4], rng);
    let w = randn(&[2 * 2 * 2, 3], rng);
    let b = randn(&[3], rng);
    let out = pred_loss(&h, &labels, &w, &b, 2)?;
    s.check("loss/pred/conv/h", &h, &out.grad_h, |h| pred_loss(h, &labels, &w, &b, 2).unwrap().loss);
    s.check("loss/pred/conv/weight", &w, &out.grad_w, |w| pred_loss(&h, &labels, w, &b, 2).unwrap().loss);
    s.check("loss/pred/conv/bias", &b, &out.grad_b, |b| pred_loss(&h, &labels, &w, b, 2).unwrap().loss);

    let proj = TargetProjection::new(5, 3, rng);
    let hd = randn(&[6, 4], rng);
    let (_, g) = crate::losses::sim_bpf_loss(&hd, &proj.project(&labels)?)?;
    s.check("loss/sim-bpf/dense/h", &hd, &g, |h| {
        crate::losses::sim_bpf_loss(h, &proj.project(&labels).unwrap()).unwrap().0
    });
    let (_, g) = crate::losses::sim_bpf_loss(&h, &proj.project(&labels)?)?;
    s.check("loss/sim-bpf/conv/h", &h, &g, |h| {
        crate::losses::sim_bpf_loss(h, &proj.project(&labels).unwrap()).unwrap().0
    });
    Ok(())
}

const BATCH: usize = 8;
const CLASSES: usize = 3;

/// Toy network for a mode: two dense hidden blocks, or two conv blocks and
/// a pool. Backprop-free modes get their feedback matrices tied to the
/// classifier weights, which makes the analytic gradient exact.
fn toy_network(mode: LossMode, conv: bool, seed: u64) -> Result<(Network<f64>, Tensor<f64>, LabelBatch)> {
    let (arch, input) = if conv { ("conv3-pool-conv2-fc", [2, 4, 4]) } else { ("fc6-fc5-fc", [1, 1, 5]) };
    let spec: NetworkSpec = parse_arch(arch, 1, &input, CLASSES)?;
    let mut loss = LossConfig::new(mode);
    loss.projection_dim = 4;
    loss.pred_target_dim = 8;
    if mode == LossMode::PredSim || mode == LossMode::PredSimBpf || mode == LossMode::GlobSim {
        // Balanced terms so both contribute measurably.
        loss.beta = 0.5;
    }
    let settings = BlockSettings { loss, slope: 0.1, dropout: 0.25 };
    let mut net = Network::new(spec, settings, seed)?;
    for b in &mut net.blocks {
        if let Some(head) = &mut b.pred {
            if let Some(fb) = &mut head.feedback {
                *fb = head.weight.value.clone();
            }
        }
    }
    let mut rng = Rng::derive(seed, 0x70);
    let x = Tensor::from_fn(&[BATCH, input[0], input[1], input[2]], |_| rng.normal());
    let labels = LabelBatch::new((0..BATCH).map(|i| i % CLASSES).collect(), CLASSES)?;
    Ok((net, x, labels))
}

#[derive(Clone, Copy)]
enum Part {
    Block(usize),
    Output,
}

/// The objective whose gradient the network reports for parameters of `part`.
fn objective(net: &mut Network<f64>, x: &Tensor<f64>, labels: &LabelBatch, dropout_seed: u64, part: Part) -> f64 {
    let (report, _) = net.gradients(x.clone(), labels, &mut Rng::new(dropout_seed)).expect("toy step");
    if net.mode().is_local() {
        match part {
            Part::Block(i) => report.layer_losses[i],
            Part::Output => report.output_loss,
        }
    } else {
        report.output_loss + report.layer_losses.iter().sum::<f64>()
    }
}

fn check_mode(s: &mut Suite<'_>, mode: LossMode, conv: bool, seed: u64) -> Result<()> {
    let (mut net, x, labels) = toy_network(mode, conv, seed)?;
    let dropout_seed = seed ^ 0xd0;
    let (_, grads) = net.gradients(x.clone(), &labels, &mut Rng::new(dropout_seed))?;
    let tag = format!("mode/{}/{}", mode, if conv { "conv" } else { "dense" });

    for (i, bg) in grads.blocks.iter().enumerate() {
        for (name, g) in bg.tensors() {
            let param = net.blocks[i].named_tensors().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t.clone());
            let param = param.expect("gradient names match parameter names");
            let mut probe_net = |p: &Tensor<f64>| {
                set_block_tensor(&mut net.blocks[i], name, p);
                objective(&mut net, &x, &labels, dropout_seed, Part::Block(i))
            };
            s.check(&format!("{}/block{}/{}", tag, i, name), &param, g, &mut probe_net);
            set_block_tensor(&mut net.blocks[i], name, &param);
        }
    }
    let w = net.output.weight.value.clone();
    s.check(&format!("{}/output/weight", tag), &w, &grads.output.weight, |p| {
        net.output.weight.value = p.clone();
        objective(&mut net, &x, &labels, dropout_seed, Part::Output)
    });
    net.output.weight.value = w;
    let b = net.output.bias.value.clone();
    s.check(&format!("{}/output/bias", tag), &b, &grads.output.bias, |p| {
        net.output.bias.value = p.clone();
        objective(&mut net, &x, &labels, dropout_seed, Part::Output)
    });
    Ok(())
}

fn set_block_tensor(block: &mut LayerBlock<f64>, name: &str, value: &Tensor<f64>) {
    *block.tensor_mut(name).expect("named parameter exists") = value.clone();
    block.touch();
}
