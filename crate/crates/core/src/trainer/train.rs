use std::fmt::Write as _;

use crate::data::{augment_batch, AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::losses::{LabelBatch, LossConfig, LossMode};
use crate::numerics::{Rng, Scalar};
use crate::trainer::arch::BlockSettings;
use crate::trainer::network::Network;
use crate::trainer::sampler::sample_batches;
use crate::trainer::schedule::LrSchedule;

pub const DEFAULT_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Loss, nonlinearity slope and dropout of the hidden blocks.
    pub block: BlockSettings,
    pub seed: u64,
    /// At most this many classes per batch until the first LR drop.
    pub classes_per_batch: Option<usize>,
    pub augment: AugmentConfig,
    /// Measure train error with an extra eval-mode pass instead of on the
    /// augmented training batches.
    pub clean_train_error: bool,
    pub eval_batch: usize,
}

impl TrainConfig {
    pub fn new(mode: LossMode) -> Self {
        TrainConfig {
            epochs: 1,
            lr: 5e-4,
            batch_size: DEFAULT_BATCH,
            block: BlockSettings { loss: LossConfig::new(mode), slope: mode.default_slope(), dropout: 0.0 },
            seed: 0,
            classes_per_batch: None,
            augment: AugmentConfig::none(),
            clean_train_error: false,
            eval_batch: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        self.block.loss.validate()
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.lr, self.epochs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_error: f64,
    pub test_error: f64,
    /// Mean loss per weight layer; the output layer's cross-entropy is last.
    pub layer_losses: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// `epoch,lr,train_error,test_error,loss_layer_0,…,loss_layer_K`.
    pub fn to_csv(&self, weight_layers: usize) -> String {
        let mut s = String::from("epoch,lr,train_error,test_error");
        for k in 0..weight_layers {
            write!(s, ",loss_layer_{}", k).expect("write to String");
        }
        s.push('\n');
        for r in &self.records {
            write!(s, "{},{},{:.6},{:.6}", r.epoch, r.lr, r.train_error, r.test_error).expect("write to String");
            for l in &r.layer_losses {
                write!(s, ",{:.6}", l).expect("write to String");
            }
            s.push('\n');
        }
        s
    }
}

/// The three independent random streams of one epoch.
pub struct EpochStreams {
    pub sample: Rng,
    pub augment: Rng,
    pub dropout: Rng,
}

impl EpochStreams {
    pub fn new(seed: u64, epoch: usize) -> Self {
        let mut rng = Rng::derive(seed, epoch as u64);
        let sample = rng.split();
        let augment = rng.split();
        let dropout = rng.split();
        EpochStreams { sample, augment, dropout }
    }
}

/// Mini-batch indices for one epoch. The class limit applies only before the
/// first learning-rate drop.
pub fn epoch_batches(cfg: &TrainConfig, labels: &[usize], classes: usize, epoch: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let limit = cfg.classes_per_batch.filter(|_| epoch < cfg.schedule().first_drop_epoch());
    sample_batches(labels, classes, cfg.batch_size, limit, rng)
}

/// Trains `net` for `cfg.epochs` epochs and evaluates on `test` after each.
///
/// Epoch `e` draws batches, augmentation and dropout from stream `e` of
/// `cfg.seed`, so a run is fully determined by seed, config and data.
pub fn train<T: Scalar>(net: &mut Network<T>, cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<History> {
    cfg.validate()?;
    if net.settings() != &cfg.block {
        return Err(Error::Config("network was built with different block settings".into()));
    }
    if train.classes > net.classes() || test.classes > net.classes() {
        return Err(Error::Config(format!(
            "data has {} classes, network {}",
            train.classes.max(test.classes),
            net.classes()
        )));
    }
    let (h, w) = (train.image_shape()[1], train.image_shape()[2]);
    cfg.augment.validate(h, w)?;
    let schedule = cfg.schedule();
    let layers = net.blocks.len() + 1;
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut streams = EpochStreams::new(cfg.seed, epoch);
        let batches = epoch_batches(cfg, &train.labels, net.classes(), epoch, &mut streams.sample)?;
        let (mut aug_rng, mut drop_rng) = (streams.augment, streams.dropout);

        let mut loss_sums = vec![0.0; layers];
        let (mut steps, mut wrong, mut seen) = (0usize, 0usize, 0usize);
        for idx in &batches {
            // Batchnorm statistics need at least two examples.
            if idx.len() < 2 {
                log::debug!("epoch {}: skipping a batch of {}", epoch, idx.len());
                continue;
            }
            let (x, labels) = train.batch(idx);
            let x = augment_batch(x, &cfg.augment, &mut aug_rng)?;
            let labels = LabelBatch::new(labels, net.classes())?;
            let report = net.train_step(x.cast(), &labels, lr, &mut drop_rng)?;
            for (s, l) in loss_sums.iter_mut().zip(report.layer_losses.iter().chain([&report.output_loss])) {
                *s += l;
            }
            steps += 1;
            wrong += report.errors;
            seen += idx.len();
        }
        let train_error = if cfg.clean_train_error {
            net.evaluate(train, cfg.eval_batch)?
        } else {
            wrong as f64 / seen.max(1) as f64
        };
        let test_error = net.evaluate(test, cfg.eval_batch)?;
        let layer_losses = loss_sums.iter().map(|s| s / steps.max(1) as f64).collect();
        log::info!(
            "epoch {} lr {:e} train_error {:.6} test_error {:.6}",
            epoch,
            lr,
            train_error,
            test_error
        );
        history.records.push(EpochRecord { epoch, lr, train_error, test_error, layer_losses });
    }
    Ok(history)
}
