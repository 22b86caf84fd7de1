//! Command-line front end: `train`, `eval` and `gradcheck`.

pub mod manifest;
pub mod presets;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::data::{self, synthetic_blobs, AugmentConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::layers::Checkpoint;
use crate::losses::{LossConfig, LossMode, PROJECTION_DIM};
use crate::numerics::Rng;
use crate::trainer::{expand_preset, parse_arch, train, BlockSettings, Network, TrainConfig, DEFAULT_BATCH};

pub use manifest::RunManifest;
pub use presets::{preset, ArchFamily, Preset};

pub const DATASETS: [&str; 6] = ["mnist", "fashion-mnist", "kmnist", "cifar10", "cifar100", "blobs"];
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Debug, Parser)]
#[command(name = "llrn", version, about = "Layer-wise training with local error signals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write metrics, manifest and checkpoint.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a test split.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

fn parse_loss(s: &str) -> std::result::Result<LossMode, String> {
    LossMode::from_str(s).map_err(|e| e.to_string())
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Start from a previous run's manifest; other flags override it.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_parser = DATASETS)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Architecture string or preset: vgg8b, vgg11b, mlp3x1024, mlp3x256,
    /// optionally with a width multiplier such as vgg8b(2x).
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub width_mult: Option<usize>,
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossMode>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Negative slope of the leaky ReLU.
    #[arg(long)]
    pub slope: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Classes per batch until the first LR drop; 0 disables.
    #[arg(long)]
    pub classes_per_batch: Option<usize>,
    #[arg(long)]
    pub cutout: Option<usize>,
    #[arg(long)]
    pub jitter: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub flip: Option<bool>,
    #[arg(long)]
    pub pred_target_dim: Option<usize>,
    #[arg(long)]
    pub projection_dim: Option<usize>,
    /// Report train error from an eval-mode pass over the train split.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub clean_train_error: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = DATASETS)]
    pub dataset: String,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Manifest of the run; defaults to the one next to the checkpoint.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

/// Fully resolved settings of one run; the manifest is its serialization.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub arch: String,
    pub width_mult: usize,
    pub loss: LossMode,
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub slope: f64,
    pub seed: u64,
    pub classes_per_batch: Option<usize>,
    pub jitter: usize,
    pub flip: bool,
    pub cutout: usize,
    pub pred_target_dim: usize,
    pub projection_dim: usize,
    pub clean_train_error: bool,
    pub out: PathBuf,
}

fn field<T: FromStr>(m: &RunManifest, key: &str) -> Result<T> {
    let v = m.require(key)?;
    v.parse().map_err(|_| Error::Config(format!("manifest: bad value {:?} for `{}`", v, key)))
}

impl RunConfig {
    /// Preset defaults for a dataset/arch/loss triple.
    pub fn from_preset(dataset: &str, arch: &str, loss: LossMode) -> Result<Self> {
        let (_, mult) = expand_preset(arch)?;
        let p = preset(dataset, ArchFamily::of(arch), mult, loss);
        Ok(RunConfig {
            dataset: dataset.to_string(),
            data_dir: PathBuf::from("data").join(dataset),
            arch: arch.to_string(),
            width_mult: mult,
            loss,
            beta: loss.default_beta(),
            epochs: p.epochs,
            lr: p.lr,
            batch_size: DEFAULT_BATCH,
            dropout: p.dropout,
            slope: loss.default_slope(),
            seed: 0,
            classes_per_batch: p.classes_per_batch,
            jitter: p.jitter,
            flip: p.flip,
            cutout: 0,
            pred_target_dim: p.pred_target_dim,
            projection_dim: PROJECTION_DIM,
            clean_train_error: false,
            out: PathBuf::from("run"),
        })
    }

    pub fn to_manifest(&self) -> RunManifest {
        let mut m = RunManifest::new();
        m.set("dataset", &self.dataset);
        m.set("data_dir", self.data_dir.display());
        m.set("arch", &self.arch);
        m.set("width_mult", self.width_mult);
        m.set("loss", self.loss);
        m.set("beta", self.beta);
        m.set("epochs", self.epochs);
        m.set("lr", self.lr);
        m.set("batch_size", self.batch_size);
        m.set("dropout", self.dropout);
        m.set("slope", self.slope);
        m.set("seed", self.seed);
        m.set("classes_per_batch", self.classes_per_batch.unwrap_or(0));
        m.set("jitter", self.jitter);
        m.set("flip", self.flip);
        m.set("cutout", self.cutout);
        m.set("pred_target_dim", self.pred_target_dim);
        m.set("projection_dim", self.projection_dim);
        m.set("clean_train_error", self.clean_train_error);
        m.set("out", self.out.display());
        m
    }

    pub fn from_manifest(m: &RunManifest) -> Result<Self> {
        let loss: String = field(m, "loss")?;
        let cpb: usize = field(m, "classes_per_batch")?;
        Ok(RunConfig {
            dataset: field(m, "dataset")?,
            data_dir: field(m, "data_dir")?,
            arch: field(m, "arch")?,
            width_mult: field(m, "width_mult")?,
            loss: LossMode::from_str(&loss)?,
            beta: field(m, "beta")?,
            epochs: field(m, "epochs")?,
            lr: field(m, "lr")?,
            batch_size: field(m, "batch_size")?,
            dropout: field(m, "dropout")?,
            slope: field(m, "slope")?,
            seed: field(m, "seed")?,
            classes_per_batch: (cpb > 0).then_some(cpb),
            jitter: field(m, "jitter")?,
            flip: field(m, "flip")?,
            cutout: field(m, "cutout")?,
            pred_target_dim: field(m, "pred_target_dim")?,
            projection_dim: field(m, "projection_dim")?,
            clean_train_error: field(m, "clean_train_error")?,
            out: field(m, "out")?,
        })
    }

    /// Resolves flags, on top of a manifest if one is given, otherwise on
    /// top of the dataset preset.
    pub fn from_args(a: &TrainArgs) -> Result<Self> {
        let mut c = match &a.manifest {
            Some(path) => Self::from_manifest(&RunManifest::load(path)?)?,
            None => {
                let dataset = a.dataset.as_deref().ok_or_else(|| Error::Usage("--dataset is required".into()))?;
                let arch = a.arch.as_deref().unwrap_or("mlp3x1024");
                let loss = a.loss.unwrap_or(LossMode::PredSim);
                let mut c = Self::from_preset(dataset, arch, loss)?;
                if let Some(w) = a.width_mult {
                    let p = preset(dataset, ArchFamily::of(arch), w, loss);
                    c = RunConfig { width_mult: w, lr: p.lr, dropout: p.dropout, pred_target_dim: p.pred_target_dim, ..c };
                }
                c
            }
        };
        if a.manifest.is_some() {
            if let Some(v) = &a.dataset {
                c.dataset = v.clone();
            }
            if let Some(v) = &a.arch {
                c.arch = v.clone();
            }
            if let Some(v) = a.loss {
                c.loss = v;
                c.beta = v.default_beta();
                c.slope = v.default_slope();
            }
            if let Some(v) = a.width_mult {
                c.width_mult = v;
            }
        }
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = a.$f.clone() { c.$f = v; } )* };
        }
        over!(data_dir, beta, epochs, lr, batch_size, dropout, slope, seed, cutout, jitter, flip);
        over!(pred_target_dim, projection_dim, clean_train_error, out);
        if let Some(v) = a.classes_per_batch {
            c.classes_per_batch = (v > 0).then_some(v);
        }
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut loss = LossConfig::new(self.loss).with_beta(self.beta);
        loss.pred_target_dim = self.pred_target_dim;
        loss.projection_dim = self.projection_dim;
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            block: BlockSettings { loss, slope: self.slope, dropout: self.dropout },
            seed: self.seed,
            classes_per_batch: self.classes_per_batch,
            augment: AugmentConfig { jitter: self.jitter, flip: self.flip, cutout: self.cutout },
            clean_train_error: self.clean_train_error,
            eval_batch: 1000,
        }
    }

    /// Builds the (untrained) network this run describes for `data`.
    pub fn network(&self, data: &Dataset) -> Result<Network<f32>> {
        let (arch, _) = expand_preset(&self.arch)?;
        let spec = parse_arch(&arch, self.width_mult, data.image_shape(), data.classes)?;
        Network::new(spec, self.train_config().block, self.seed)
    }
}

/// Loads and standardizes the train and test splits of `dataset`.
pub fn load_dataset(dataset: &str, dir: &Path) -> Result<(Dataset, Dataset)> {
    let (mut tr, mut te) = match dataset {
        "mnist" | "fashion-mnist" | "kmnist" => data::load_mnist(dir)?,
        "cifar10" => data::load_cifar10(dir)?,
        "cifar100" => data::load_cifar100(dir)?,
        "blobs" => blobs()?,
        other => {
            return Err(Error::Usage(format!("unknown dataset {:?}; expected one of {}", other, DATASETS.join(", "))))
        }
    };
    data::standardize(&mut tr, &mut [&mut te])?;
    Ok((tr, te))
}

/// Small built-in problem for smoke runs: 3 Gaussian blobs in 16
/// dimensions, alternate examples going to train and test.
fn blobs() -> Result<(Dataset, Dataset)> {
    let all = synthetic_blobs(3, 400, 16, 5.0, &mut Rng::new(0))?;
    let (even, odd): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|i| i % 2 == 0);
    let pick = |idx: &[usize], split| {
        let (x, y) = all.batch(idx);
        Dataset::new(x, y, all.classes, split)
    };
    Ok((pick(&even, Split::Train)?, pick(&odd, Split::Test)?))
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = RunConfig::from_args(args)?;
    let (train_set, test_set) = load_dataset(&cfg.dataset, &cfg.data_dir)?;
    let mut net = cfg.network(&train_set)?;
    fs::create_dir_all(&cfg.out)?;
    cfg.to_manifest().save(cfg.out.join(MANIFEST_FILE))?;
    let history = train(&mut net, &cfg.train_config(), &train_set, &test_set)?;
    fs::write(cfg.out.join(METRICS_FILE), history.to_csv(net.spec().weight_layers()))?;
    net.to_checkpoint().save(cfg.out.join(CHECKPOINT_FILE))?;
    let test_error = match history.last() {
        Some(r) => r.test_error,
        None => net.evaluate(&test_set, 1000)?,
    };
    println!("test_error={:.6}", test_error);
    Ok(0)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let manifest = match &args.manifest {
        Some(p) => p.clone(),
        None => args.checkpoint.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE),
    };
    let mut cfg = RunConfig::from_manifest(&RunManifest::load(manifest)?)?;
    cfg.dataset = args.dataset.clone();
    cfg.data_dir = args.data_dir.clone();
    let (train_set, test_set) = load_dataset(&cfg.dataset, &cfg.data_dir)?;
    let mut net = cfg.network(&train_set)?;
    net.load_checkpoint(&Checkpoint::load(&args.checkpoint)?)?;
    println!("test_error={:.6}", net.evaluate(&test_set, 1000)?);
    Ok(0)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let opts = gradcheck::Options { seed: args.seed, corrupt: args.corrupt.clone() };
    let results = gradcheck::run_suite(&opts)?;
    for r in &results {
        println!("{}", r);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(0)
    } else {
        eprintln!("{} of {} checks failed: {}", failed.len(), results.len(), failed.join(", "));
        Ok(1)
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}
