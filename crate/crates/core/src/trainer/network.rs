use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{BlockCache, BlockGrads, CacheTracker, Checkpoint, LayerBlock, OutputGrads, OutputLayer};
use crate::losses::{LabelBatch, LossMode};
use crate::numerics::loss::{argmax_rows, cross_entropy_labels};
use crate::numerics::{Mode, Rng, Scalar, Tensor};
use crate::trainer::arch::{BlockSettings, NetworkSpec};

/// Stream offset for parameter initialization; epoch streams use `0..`.
pub const INIT_STREAM: u64 = 1 << 32;

/// Hidden blocks followed by the output classifier.
#[derive(Debug)]
pub struct Network<T> {
    pub blocks: Vec<LayerBlock<T>>,
    pub output: OutputLayer<T>,
    spec: NetworkSpec,
    settings: BlockSettings,
    tracker: CacheTracker,
}

/// Losses and error count of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Weighted local loss of each hidden block (0 where a block has none).
    pub layer_losses: Vec<f64>,
    /// Global cross-entropy at the output layer.
    pub output_loss: f64,
    /// Misclassified examples in the batch.
    pub errors: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrads<T> {
    pub blocks: Vec<BlockGrads<T>>,
    pub output: OutputGrads<T>,
}

fn finite(loss: f64, layer: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss at layer {} is {}", layer, loss)))
    }
}

impl<T: Scalar> Network<T> {
    /// Initializes every layer from `seed`; block `i` draws from stream
    /// `INIT_STREAM + i`, the output layer from the stream after the last.
    pub fn new(spec: NetworkSpec, settings: BlockSettings, seed: u64) -> Result<Self> {
        let tracker = CacheTracker::new();
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for (i, bs) in spec.block_specs(&settings).into_iter().enumerate() {
            let mut block = LayerBlock::init_params(bs, &mut Rng::derive(seed, INIT_STREAM + i as u64))?;
            block.attach_tracker(tracker.clone());
            blocks.push(block);
        }
        let mut rng = Rng::derive(seed, INIT_STREAM + blocks.len() as u64);
        let output = OutputLayer::init_params(spec.output_inputs, spec.classes, &mut rng)?;
        Ok(Network { blocks, output, spec, settings, tracker })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn settings(&self) -> &BlockSettings {
        &self.settings
    }

    pub fn mode(&self) -> LossMode {
        self.settings.loss.mode
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// Counter of live hidden-layer caches, shared by all blocks.
    pub fn tracker(&self) -> &CacheTracker {
        &self.tracker
    }

    /// One training step: gradients and immediate Adam updates.
    ///
    /// Local modes sweep the blocks once in forward order. Each block
    /// computes its local losses, releases its cache, updates, and passes
    /// its output on; nothing flows back across blocks. Global modes keep
    /// every cache, backpropagate from the output and then update.
    pub fn train_step(&mut self, x: Tensor<T>, labels: &LabelBatch, lr: f64, rng: &mut Rng) -> Result<StepReport> {
        Ok(self.step(x, labels, rng, Some(lr))?.0)
    }

    /// Same computation as [`Self::train_step`] without touching parameters
    /// (running statistics still move).
    pub fn gradients(&mut self, x: Tensor<T>, labels: &LabelBatch, rng: &mut Rng) -> Result<(StepReport, NetworkGrads<T>)> {
        let (report, grads) = self.step(x, labels, rng, None)?;
        Ok((report, grads.expect("gradients are returned when no lr is given")))
    }

    fn step(
        &mut self,
        x: Tensor<T>,
        labels: &LabelBatch,
        rng: &mut Rng,
        lr: Option<f64>,
    ) -> Result<(StepReport, Option<NetworkGrads<T>>)> {
        if labels.classes() != self.spec.classes || labels.len() != x.batch() {
            return Err(Error::Input(format!(
                "{} labels over {} classes for a batch of {} on a {}-class network",
                labels.len(),
                labels.classes(),
                x.batch(),
                self.spec.classes
            )));
        }
        let local = self.mode().is_local();
        let k = self.blocks.len();
        let mut layer_losses = vec![0.0; k];
        let mut block_grads = Vec::with_capacity(k);
        let mut caches: Vec<BlockCache<T>> = Vec::new();
        let mut in_shapes = Vec::with_capacity(k);

        let mut h = x;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            in_shapes.push(h.shape().to_vec());
            let (out, cache) = block.forward(h, Mode::Train, rng)?;
            if local {
                let bw = block.local_backward(&cache, labels)?;
                finite(bw.losses.total, i)?;
                layer_losses[i] = bw.losses.total;
                drop(cache);
                match lr {
                    Some(lr) => block.apply_grads(&bw.grads, lr)?,
                    None => block_grads.push(bw.grads),
                }
            } else {
                caches.push(cache);
            }
            h = out;
        }

        let logits = self.output.forward(&h)?;
        let (output_loss, dlogits) = cross_entropy_labels(&logits, labels.labels())?;
        finite(output_loss, k)?;
        let errors = argmax_rows(&logits).iter().zip(labels.labels()).filter(|(p, l)| p != l).count();
        let (output_grads, dx) = self.output.backward(&h, &dlogits, !local && k > 0)?;
        drop(h);

        if !local {
            let mut upstream = dx;
            let mut rev = Vec::with_capacity(k);
            for i in (0..k).rev() {
                let cache = caches.pop().expect("one cache per block");
                let up = upstream.take().expect("upstream gradient for every block");
                let bw = self.blocks[i].backward(&cache, labels, Some(&up), i > 0)?;
                finite(bw.losses.total, i)?;
                layer_losses[i] = bw.losses.total;
                upstream = bw.input_grad.map(|g| g.reshape(&in_shapes[i])).transpose()?;
                rev.push(bw.grads);
            }
            rev.reverse();
            block_grads = rev;
        }

        match lr {
            Some(lr) => {
                self.output.apply_grads(&output_grads, lr)?;
                for (block, g) in self.blocks.iter_mut().zip(&block_grads) {
                    block.apply_grads(g, lr)?;
                }
                Ok((StepReport { layer_losses, output_loss, errors }, None))
            }
            None => Ok((
                StepReport { layer_losses, output_loss, errors },
                Some(NetworkGrads { blocks: block_grads, output: output_grads }),
            )),
        }
    }

    /// Output logits in `mode`. Train mode updates batchnorm running stats
    /// and draws dropout masks from `rng`.
    pub fn logits(&mut self, x: Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        let mut h = x;
        for block in &mut self.blocks {
            h = block.forward(h, mode, rng)?.0;
        }
        self.output.forward(&h)
    }

    /// Fraction of argmax-misclassified examples in eval mode.
    pub fn evaluate(&mut self, data: &Dataset, batch_size: usize) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Data("cannot evaluate on an empty dataset".into()));
        }
        let mut rng = Rng::new(0);
        let mut wrong = 0usize;
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(batch_size.max(1)) {
            let (x, labels) = data.batch(chunk);
            let logits = self.logits(x.cast(), Mode::Eval, &mut rng)?;
            wrong += argmax_rows(&logits).iter().zip(&labels).filter(|(p, l)| p != l).count();
        }
        Ok(wrong as f64 / data.len() as f64)
    }

    /// Every stored tensor as `block{i}.{name}` and `output.{weight,bias}`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.blocks.len() as u32);
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in b.named_tensors() {
                ck.push(format!("block{}.{}", i, name), t);
            }
        }
        ck.push("output.weight", &self.output.weight.value);
        ck.push("output.bias", &self.output.bias.value);
        ck
    }

    /// Replaces every stored tensor with the checkpoint's. The checkpoint
    /// must name exactly this network's tensors with the same shapes.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let expected = self.to_checkpoint();
        if ck.block_count != expected.block_count {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint has {} hidden blocks, network has {}",
                ck.block_count, expected.block_count
            )));
        }
        for (name, t) in &expected.tensors {
            let got = ck
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("architecture mismatch: tensor {} missing", name)))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "architecture mismatch: {} has shape {:?}, network expects {:?}",
                    name,
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if let Some((extra, _)) = ck.tensors.iter().find(|(n, _)| expected.get(n).is_none()) {
            return Err(Error::Checkpoint(format!("architecture mismatch: unexpected tensor {}", extra)));
        }
        for (name, t) in &ck.tensors {
            let target = match name.split_once('.') {
                Some(("output", "weight")) => Some(&mut self.output.weight.value),
                Some(("output", "bias")) => Some(&mut self.output.bias.value),
                Some((block, field)) => block
                    .strip_prefix("block")
                    .and_then(|i| i.parse::<usize>().ok())
                    .and_then(|i| self.blocks.get_mut(i))
                    .and_then(|b| b.tensor_mut(field)),
                None => None,
            };
            *target.ok_or_else(|| Error::Checkpoint(format!("cannot place tensor {}", name)))? = t.cast();
        }
        for b in &mut self.blocks {
            b.touch();
        }
        Ok(())
    }
}
