//! One hidden weight layer with its batchnorm, nonlinearity, dropout and the
//! two single-layer sub-networks that produce its local learning signal.
//!
//! Forward order: linear/conv → batchnorm → leaky ReLU → dropout → optional
//! 2×2 max-pool. Local losses read the post-nonlinearity activations before
//! dropout; the dropped-out (and pooled) tensor is what flows downstream.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{dim_err, Error, Result};
use crate::layers::adam::{adam_step, AdamState};
use crate::layers::tracker::{CacheTracker, LiveToken};
use crate::losses::{
    choose_pool_kernel, combine, pred_bpf_loss, pred_loss, sim_bpf_loss, sim_loss, LabelBatch, LossConfig,
    SimHead, TargetProjection,
};
use crate::numerics::conv::{add_channel_bias, channel_sums, conv2d, conv2d_input_grad, conv2d_kernel_grad};
use crate::numerics::linalg::{add_row_bias, column_sums, matmul, matmul_t, Trans};
use crate::numerics::{
    batchnorm, batchnorm_backward, dropout, dropout_backward, leaky_relu, leaky_relu_backward, maxpool2x2,
    maxpool2x2_backward, BatchNormCache, ConvGeometry, DropoutMask, Mode, Rng, RunningStats, Scalar, Tensor,
};

static NEXT_BLOCK_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Dense { inputs: usize, outputs: usize },
    Conv { in_channels: usize, out_channels: usize, height: usize, width: usize, geom: ConvGeometry },
}

/// Everything needed to build a [`LayerBlock`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// 2×2 max-pool applied to the block's downstream output.
    pub pool_after: bool,
    pub slope: f64,
    pub dropout: f64,
    pub classes: usize,
    pub loss: LossConfig,
}

impl BlockSpec {
    pub fn fan_in(&self) -> usize {
        match self.kind {
            BlockKind::Dense { inputs, .. } => inputs,
            BlockKind::Conv { in_channels, geom, .. } => in_channels * geom.kernel * geom.kernel,
        }
    }

    /// Per-example shape of the input.
    pub fn input_shape(&self) -> Vec<usize> {
        match self.kind {
            BlockKind::Dense { inputs, .. } => vec![inputs],
            BlockKind::Conv { in_channels, height, width, .. } => vec![in_channels, height, width],
        }
    }

    /// Per-example shape of the activations the local losses see.
    pub fn hidden_shape(&self) -> Result<Vec<usize>> {
        match self.kind {
            BlockKind::Dense { outputs, .. } => Ok(vec![outputs]),
            BlockKind::Conv { out_channels, height, width, geom, .. } => {
                Ok(vec![out_channels, geom.output_extent(height)?, geom.output_extent(width)?])
            }
        }
    }

    /// Per-example shape of what flows downstream.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut s = self.hidden_shape()?;
        if self.pool_after {
            if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
                return Err(dim_err!("cannot 2×2-pool activations of shape {:?}", s));
            }
            s[1] /= 2;
            s[2] /= 2;
        }
        Ok(s)
    }

    pub fn features(&self) -> usize {
        match self.kind {
            BlockKind::Dense { outputs, .. } => outputs,
            BlockKind::Conv { out_channels, .. } => out_channels,
        }
    }

    /// Average-pool kernel in front of the local classifier.
    pub fn pred_pool(&self) -> Result<usize> {
        let h = self.hidden_shape()?;
        Ok(if h.len() == 3 { choose_pool_kernel(h[0], h[1], self.loss.pred_target_dim) } else { 1 })
    }

    /// Input width of the local classifier.
    pub fn pred_inputs(&self) -> Result<usize> {
        let h = self.hidden_shape()?;
        let k = self.pred_pool()?;
        Ok(if h.len() == 3 { h[0] * (h[1] / k) * (h[2] / k) } else { h[0] })
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_in() == 0 || self.features() == 0 {
            return Err(Error::Config(format!("block {:?} has zero fan-in or width", self.kind)));
        }
        crate::numerics::activation::check_dropout_rate(self.dropout)?;
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::Config(format!("nonlinearity slope must be in [0, 1), got {}", self.slope)));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        self.loss.validate()?;
        self.output_shape()?;
        Ok(())
    }
}

/// A trainable tensor and its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub adam: AdamState<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let adam = AdamState::new(value.shape());
        Param { value, adam }
    }

    pub fn step(&mut self, grad: &Tensor<T>, lr: f64) -> Result<()> {
        adam_step(&mut self.value, grad, &mut self.adam, lr)
    }
}

fn uniform_fan_in<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.uniform_range(-bound, bound)))
}

/// Local linear classifier. `feedback` is present in the backprop-free
/// variant and replaces `weightᵀ` on the path back to the activations.
#[derive(Clone, Debug, PartialEq)]
pub struct PredHead<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub feedback: Option<Tensor<T>>,
    pub pool: usize,
}

/// Gradients for every trainable tensor of a block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub pred_weight: Option<Tensor<T>>,
    pub pred_bias: Option<Tensor<T>>,
    pub sim_head: Option<Tensor<T>>,
}

impl<T: Scalar> BlockGrads<T> {
    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// `(name, grad)` pairs in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = vec![("weight", &self.weight), ("bias", &self.bias), ("bn.gamma", &self.gamma), ("bn.beta", &self.beta)];
        if let Some(t) = &self.pred_weight {
            out.push(("pred.weight", t));
        }
        if let Some(t) = &self.pred_bias {
            out.push(("pred.bias", t));
        }
        if let Some(t) = &self.sim_head {
            out.push(("sim.weight", t));
        }
        out
    }
}

/// Local loss values of one block for one batch (unweighted components).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalLosses {
    pub pred: Option<f64>,
    pub sim: Option<f64>,
    /// Weighted total that the block's gradients descend.
    pub total: f64,
}

/// Result of [`LayerBlock::backward`].
#[derive(Debug)]
pub struct BlockBackward<T> {
    pub losses: LocalLosses,
    pub grads: BlockGrads<T>,
    /// `dL/dinput`; only produced when requested (global modes).
    pub input_grad: Option<Tensor<T>>,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug)]
pub struct BlockCache<T> {
    block_id: u64,
    version: u64,
    input: Tensor<T>,
    pre_act: Tensor<T>,
    bn: BatchNormCache<T>,
    hidden: Tensor<T>,
    dropout: Option<DropoutMask<T>>,
    pool: Option<(Vec<usize>, Vec<usize>)>,
    _live: LiveToken,
}

impl<T: Scalar> BlockCache<T> {
    /// Post-nonlinearity, pre-dropout activations.
    pub fn hidden(&self) -> &Tensor<T> {
        &self.hidden
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }
}

/// One hidden weight layer plus its local sub-networks (classifier and
/// similarity head) and their Adam state.
#[derive(Clone, Debug)]
pub struct LayerBlock<T> {
    spec: BlockSpec,
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running: RunningStats<T>,
    pub pred: Option<PredHead<T>>,
    pub sim_head: Option<Param<T>>,
    pub projection: Option<TargetProjection<T>>,
    id: u64,
    version: u64,
    tracker: CacheTracker,
}

impl<T: Scalar> LayerBlock<T> {
    /// Builds a block with freshly initialized parameters.
    ///
    /// Weights (main layer and sub-networks) are `U(−√(1/fan_in), √(1/fan_in))`,
    /// biases zero, `gamma = 1`, `beta = 0`. The feedback matrix and target
    /// projection are Gaussian with standard deviation `1/√fan_out`; both
    /// are frozen.
    pub fn init_params(spec: BlockSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.fan_in();
        let feats = spec.features();
        let weight_shape = match spec.kind {
            BlockKind::Dense { inputs, outputs } => vec![inputs, outputs],
            BlockKind::Conv { in_channels, out_channels, geom, .. } => {
                vec![out_channels, in_channels, geom.kernel, geom.kernel]
            }
        };
        let weight = Param::new(uniform_fan_in(&weight_shape, fan_in, rng));
        let bias = Param::new(Tensor::zeros(&[feats]));
        let gamma = Param::new(Tensor::full(&[feats], T::one()));
        let beta = Param::new(Tensor::zeros(&[feats]));
        let mode = spec.loss.mode;

        let pred = if mode.has_pred() {
            let inputs = spec.pred_inputs()?;
            let width = if mode.is_bpf() { spec.loss.projection_dim } else { spec.classes };
            let w = uniform_fan_in(&[inputs, width], inputs, rng);
            let feedback = mode.is_bpf().then(|| {
                let sd = 1.0 / (width as f64).sqrt();
                Tensor::from_fn(&[inputs, width], |_| T::of(rng.normal() * sd))
            });
            Some(PredHead {
                weight: Param::new(w),
                bias: Param::new(Tensor::zeros(&[width])),
                feedback,
                pool: spec.pred_pool()?,
            })
        } else {
            None
        };
        let sim_head = if mode.has_sim_head() {
            Some(Param::new(match spec.kind {
                BlockKind::Dense { outputs, .. } => uniform_fan_in(&[outputs, outputs], outputs, rng),
                BlockKind::Conv { out_channels, .. } => {
                    uniform_fan_in(&[out_channels, out_channels, 3, 3], out_channels * 9, rng)
                }
            }))
        } else {
            None
        };
        let projection = mode
            .is_bpf()
            .then(|| TargetProjection::new(spec.loss.projection_dim, spec.classes, rng));

        Ok(LayerBlock {
            running: RunningStats::new(feats),
            spec,
            weight,
            bias,
            gamma,
            beta,
            pred,
            sim_head,
            projection,
            id: NEXT_BLOCK_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            tracker: CacheTracker::new(),
        })
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    /// Counts this block's live caches on `tracker` from now on.
    pub fn attach_tracker(&mut self, tracker: CacheTracker) {
        self.tracker = tracker;
    }

    /// Number of parameter updates applied so far.
    pub fn version(&self) -> u64 {
        self.version
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let expect = self.spec.input_shape();
        let ok = match self.spec.kind {
            BlockKind::Dense { inputs, .. } => x.rank() >= 2 && x.row_len() == inputs,
            BlockKind::Conv { .. } => x.rank() == 4 && x.shape()[1..] == expect[..],
        };
        if !ok {
            return Err(dim_err!("block expects per-example input {:?}, got {:?}", expect, x.shape()));
        }
        Ok(())
    }

    /// Runs the block on `x` (taken by value: the cache keeps it for the
    /// weight gradient). Returns the downstream output and the cache.
    pub fn forward(&mut self, x: Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, BlockCache<T>)> {
        self.check_input(&x)?;
        let input = if matches!(self.spec.kind, BlockKind::Dense { .. }) { x.flatten_batch() } else { x };
        let z = match self.spec.kind {
            BlockKind::Dense { .. } => {
                let mut z = matmul(&input, &self.weight.value)?;
                add_row_bias(&mut z, &self.bias.value)?;
                z
            }
            BlockKind::Conv { geom, .. } => {
                let mut z = conv2d(&input, &self.weight.value, geom)?;
                add_channel_bias(&mut z, &self.bias.value)?;
                z
            }
        };
        let (pre_act, bn) = batchnorm(&z, &self.gamma.value, &self.beta.value, &mut self.running, mode)?;
        drop(z);
        let hidden = leaky_relu(&pre_act, T::of(self.spec.slope));
        let (dropped, mask) = dropout(&hidden, self.spec.dropout, rng, mode)?;
        let (out, pool) = if self.spec.pool_after {
            let (p, idx) = maxpool2x2(&dropped)?;
            (p, Some((idx, dropped.shape().to_vec())))
        } else {
            (dropped, None)
        };
        let cache = BlockCache {
            block_id: self.id,
            version: self.version,
            input,
            pre_act,
            bn,
            hidden,
            dropout: mask,
            pool,
            _live: self.tracker.acquire(),
        };
        Ok((out, cache))
    }

    /// Local losses of this block on a cached forward pass, with the gradient
    /// at the hidden activations and the sub-network parameter gradients.
    fn local_losses(
        &self,
        cache: &BlockCache<T>,
        labels: &LabelBatch,
    ) -> Result<(LocalLosses, Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>)> {
        let cfg = &self.spec.loss;
        let mode = cfg.mode;
        let (wp, ws) = cfg.weights();
        let h = &cache.hidden;
        let mut losses = LocalLosses::default();

        let mut pred_part = None;
        let (mut gpw, mut gpb) = (None, None);
        if mode.is_local() && mode.has_pred() {
            let head = self.pred.as_ref().ok_or_else(|| Error::Usage("block has no pred head".into()))?;
            let out = if let Some(fb) = &head.feedback {
                let proj = self.projection.as_ref().ok_or_else(|| Error::Usage("missing target projection".into()))?;
                pred_bpf_loss(h, labels, &head.weight.value, &head.bias.value, fb, proj, head.pool)?
            } else {
                pred_loss(h, labels, &head.weight.value, &head.bias.value, head.pool)?
            };
            losses.pred = Some(out.loss);
            gpw = Some(out.grad_w.scaled(T::of(wp)));
            gpb = Some(out.grad_b.scaled(T::of(wp)));
            pred_part = Some((out.loss, out.grad_h));
        }

        let mut sim_part = None;
        let mut gsim = None;
        if mode.has_sim() {
            if mode.is_bpf() {
                let proj = self.projection.as_ref().ok_or_else(|| Error::Usage("missing target projection".into()))?;
                let (loss, grad_h) = sim_bpf_loss(h, &proj.project(labels)?)?;
                sim_part = Some((loss, grad_h));
            } else {
                let head = self.sim_head.as_ref().ok_or_else(|| Error::Usage("block has no sim head".into()))?;
                let head = match self.spec.kind {
                    BlockKind::Dense { .. } => SimHead::Dense(&head.value),
                    BlockKind::Conv { .. } => SimHead::Conv(&head.value),
                };
                let out = sim_loss(h, &labels.target_similarity()?, head)?;
                gsim = Some(out.grad_head.scaled(T::of(ws)));
                sim_part = Some((out.loss, out.grad_h));
            }
            losses.sim = sim_part.as_ref().map(|p| p.0);
        }

        let grad_h = match (pred_part, sim_part) {
            (Some((lp, gp)), Some((ls, gs))) => {
                let (total, g) = combine((lp, &gp), (ls, &gs), cfg.beta)?;
                losses.total = total;
                Some(g)
            }
            (Some((lp, gp)), None) => {
                losses.total = wp * lp;
                Some(gp.scaled(T::of(wp)))
            }
            (None, Some((ls, gs))) => {
                losses.total = ws * ls;
                Some(gs.scaled(T::of(ws)))
            }
            (None, None) => None,
        };
        Ok((losses, grad_h, gpw, gpb, gsim))
    }

    /// Backward pass of the block.
    ///
    /// In local modes `upstream` must be `None`: the gradient comes only from
    /// this block's own losses and passes through one weight layer at most.
    /// In global modes `upstream` is `dL/doutput`; `glob+sim` adds this
    /// block's weighted sim loss at the hidden activations. The input
    /// gradient is computed only when `want_input_grad` is set.
    pub fn backward(
        &self,
        cache: &BlockCache<T>,
        labels: &LabelBatch,
        upstream: Option<&Tensor<T>>,
        want_input_grad: bool,
    ) -> Result<BlockBackward<T>> {
        if cache.block_id != self.id || cache.version != self.version {
            return Err(Error::Usage(format!(
                "stale cache: produced by block {} v{}, used on block {} v{}",
                cache.block_id, cache.version, self.id, self.version
            )));
        }
        let mode = self.spec.loss.mode;
        if mode.is_local() && upstream.is_some() {
            return Err(Error::Usage("local-loss blocks take no downstream gradient".into()));
        }
        let (losses, local_grad, pred_weight, pred_bias, sim_head) = self.local_losses(cache, labels)?;

        let mut grad_h = match upstream {
            Some(g) => {
                let g = match &cache.pool {
                    Some((idx, shape)) => maxpool2x2_backward(g, idx, shape)?,
                    None => g.clone(),
                };
                dropout_backward(&g.reshape(cache.hidden.shape())?, cache.dropout.as_ref())?
            }
            None => Tensor::zeros(cache.hidden.shape()),
        };
        if let Some(g) = &local_grad {
            grad_h.add_assign(g)?;
        }

        let dz = leaky_relu_backward(&grad_h, &cache.pre_act, T::of(self.spec.slope))?;
        let (dz, gamma, beta) = batchnorm_backward(&dz, &cache.bn, &self.gamma.value)?;
        let (weight, bias, input_grad) = match self.spec.kind {
            BlockKind::Dense { .. } => {
                let dw = matmul_t(&cache.input, Trans::Yes, &dz, Trans::No)?;
                let db = column_sums(&dz)?;
                let dx = if want_input_grad {
                    Some(matmul_t(&dz, Trans::No, &self.weight.value, Trans::Yes)?)
                } else {
                    None
                };
                (dw, db, dx)
            }
            BlockKind::Conv { geom, .. } => {
                let dw = conv2d_kernel_grad(&cache.input, &self.weight.value, geom, &dz)?;
                let db = channel_sums(&dz)?;
                let dx = if want_input_grad {
                    Some(conv2d_input_grad(cache.input.shape(), &self.weight.value, geom, &dz)?)
                } else {
                    None
                };
                (dw, db, dx)
            }
        };
        Ok(BlockBackward {
            losses,
            grads: BlockGrads { weight, bias, gamma, beta, pred_weight, pred_bias, sim_head },
            input_grad,
        })
    }

    /// Local backward: gradients of this block's own losses only.
    pub fn local_backward(&self, cache: &BlockCache<T>, labels: &LabelBatch) -> Result<BlockBackward<T>> {
        if !self.spec.loss.mode.is_local() {
            return Err(Error::Usage(format!("mode {} has no local backward", self.spec.loss.mode)));
        }
        self.backward(cache, labels, None, false)
    }

    /// Applies one Adam step to every trainable tensor. Frozen tensors
    /// (feedback matrix, target projection, running stats) are untouched.
    pub fn apply_grads(&mut self, grads: &BlockGrads<T>, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("block gradients".into()));
        }
        self.weight.step(&grads.weight, lr)?;
        self.bias.step(&grads.bias, lr)?;
        self.gamma.step(&grads.gamma, lr)?;
        self.beta.step(&grads.beta, lr)?;
        if let (Some(head), Some(gw), Some(gb)) = (self.pred.as_mut(), &grads.pred_weight, &grads.pred_bias) {
            head.weight.step(gw, lr)?;
            head.bias.step(gb, lr)?;
        }
        if let (Some(head), Some(g)) = (self.sim_head.as_mut(), &grads.sim_head) {
            head.step(g, lr)?;
        }
        self.version += 1;
        Ok(())
    }

    /// Every stored tensor, trainable or frozen, by name.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = vec![
            ("weight", &self.weight.value),
            ("bias", &self.bias.value),
            ("bn.gamma", &self.gamma.value),
            ("bn.beta", &self.beta.value),
            ("bn.running_mean", &self.running.mean),
            ("bn.running_var", &self.running.var),
        ];
        if let Some(head) = &self.pred {
            out.push(("pred.weight", &head.weight.value));
            out.push(("pred.bias", &head.bias.value));
            if let Some(fb) = &head.feedback {
                out.push(("pred.feedback", fb));
            }
        }
        if let Some(h) = &self.sim_head {
            out.push(("sim.weight", &h.value));
        }
        if let Some(p) = &self.projection {
            out.push(("projection", p.matrix()));
        }
        out
    }

    /// Mutable access by name, mirroring [`Self::named_tensors`].
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        match name {
            "weight" => Some(&mut self.weight.value),
            "bias" => Some(&mut self.bias.value),
            "bn.gamma" => Some(&mut self.gamma.value),
            "bn.beta" => Some(&mut self.beta.value),
            "bn.running_mean" => Some(&mut self.running.mean),
            "bn.running_var" => Some(&mut self.running.var),
            "pred.weight" => self.pred.as_mut().map(|h| &mut h.weight.value),
            "pred.bias" => self.pred.as_mut().map(|h| &mut h.bias.value),
            "pred.feedback" => self.pred.as_mut().and_then(|h| h.feedback.as_mut()),
            "sim.weight" => self.sim_head.as_mut().map(|h| &mut h.value),
            "projection" => self.projection.as_mut().map(TargetProjection::matrix_mut),
            _ => None,
        }
    }

    /// Marks a parameter edit made through [`Self::tensor_mut`], so caches
    /// from earlier forwards are recognised as stale.
    pub fn touch(&mut self) {
        self.version += 1;
    }
}
