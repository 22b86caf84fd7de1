//! Acceptance criteria. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion. Positional arguments select criteria by
//! number (`cargo test --test acceptance -- 4 5`).

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use llrn::cli::{load_dataset, RunConfig};
use llrn::data::idx::{encode_images, encode_labels, load_mnist};
use llrn::data::{synthetic_blobs, Dataset, Split};
use llrn::gradcheck::{run_suite, Options, TOLERANCE};
use llrn::layers::Checkpoint;
use llrn::losses::{similarity_matrix, LabelBatch, LossConfig, LossMode};
use llrn::numerics::{Rng, Tensor};
use llrn::trainer::{epoch_batches, parse_arch, train, BlockSettings, EpochStreams, LrSchedule, Network, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn local_modes() -> impl Iterator<Item = LossMode> {
    LossMode::ALL.into_iter().filter(|m| m.is_local())
}

fn settings(mode: LossMode, dropout: f64) -> BlockSettings {
    BlockSettings { loss: LossConfig::new(mode), slope: mode.default_slope(), dropout }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let results = run_suite(&Options { seed: 0, corrupt: None }).map_err(e)?;
    let elapsed = start.elapsed();
    let failed: Vec<String> = results.iter().filter(|r| !r.passed()).map(|r| r.to_string()).collect();
    ensure(failed.is_empty(), || format!("failing checks: {}", failed.join("; ")))?;
    for mode in ["pred", "sim", "predsim", "pred-bpf", "sim-bpf", "predsim-bpf", "glob", "glob+sim"] {
        let tag = format!("mode/{}/", mode);
        ensure(results.iter().any(|r| r.name.starts_with(&tag)), || format!("no check for {}", mode))?;
    }
    ensure(elapsed < Duration::from_secs(60), || format!("took {:?}", elapsed))?;
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Ok(format!("{} checks, worst rel err {:.2e} < {:.0e}, {:.1?}", results.len(), worst, TOLERANCE, elapsed))
}

fn c2_detachment() -> Outcome {
    let spec = parse_arch("conv4-pool-conv4-fc8-fc8-fc", 1, &[1, 4, 4], 3).map_err(e)?;
    let mut rng = Rng::new(2);
    let x = Tensor::from_fn(&[8, 1, 4, 4], |_| rng.normal());
    let labels = LabelBatch::new((0..8).map(|i| i % 3).collect(), 3).map_err(e)?;
    let mut checked = 0;
    for mode in local_modes() {
        let base = Network::<f64>::new(spec.clone(), settings(mode, 0.1), 5).map_err(e)?;
        let reference = {
            let mut net = Network::<f64>::new(spec.clone(), settings(mode, 0.1), 5).map_err(e)?;
            net.gradients(x.clone(), &labels, &mut Rng::new(9)).map_err(e)?.1
        };
        for j in 1..base.blocks.len() {
            let mut net = Network::<f64>::new(spec.clone(), settings(mode, 0.1), 5).map_err(e)?;
            let names: Vec<&str> = net.blocks[j].named_tensors().iter().map(|(n, _)| *n).collect();
            for name in names {
                let t = net.blocks[j].tensor_mut(name).expect("named tensor exists");
                let mut prng = Rng::new(j as u64);
                for v in t.data_mut() {
                    *v += 0.5 * prng.normal();
                }
            }
            let grads = net.gradients(x.clone(), &labels, &mut Rng::new(9)).map_err(e)?.1;
            for i in 0..j {
                ensure(grads.blocks[i] == reference.blocks[i], || {
                    format!("{}: perturbing block {} changed block {} gradients", mode, j, i)
                })?;
                checked += 1;
            }
            ensure(grads.blocks[j] != reference.blocks[j], || format!("{}: perturbation of block {} had no effect", mode, j))?;
        }
    }
    Ok(format!("{} (mode, j, i<j) pairs bit-identical on a 4-block net", checked))
}

fn hash_feedback(net: &Network<f32>) -> u64 {
    let mut h = DefaultHasher::new();
    for b in &net.blocks {
        let fb = b.pred.as_ref().and_then(|p| p.feedback.as_ref()).expect("pred-bpf blocks carry feedback");
        for v in fb.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn c3_feedback_alignment() -> Outcome {
    let spec = parse_arch("conv4-pool-fc16-fc", 1, &[1, 4, 4], 3).map_err(e)?;
    let mut rng = Rng::new(3);
    let x = Tensor::from_fn(&[12, 1, 4, 4], |_| rng.normal());
    let labels = LabelBatch::new((0..12).map(|i| i % 3).collect(), 3).map_err(e)?;
    let s = settings(LossMode::PredBpf, 0.0);
    let mut a = Network::<f64>::new(spec.clone(), s.clone(), 1).map_err(e)?;
    let mut b = Network::<f64>::new(spec.clone(), s.clone(), 1).map_err(e)?;
    for block in &mut b.blocks {
        let fb = block.pred.as_mut().and_then(|p| p.feedback.as_mut()).expect("feedback present");
        for v in fb.data_mut() {
            *v = rng.normal() * 0.1;
        }
    }
    let ga = a.gradients(x.clone(), &labels, &mut Rng::new(0)).map_err(e)?.1;
    let gb = b.gradients(x, &labels, &mut Rng::new(0)).map_err(e)?.1;
    for (i, (p, q)) in ga.blocks.iter().zip(&gb.blocks).enumerate() {
        ensure(p.pred_weight == q.pred_weight && p.pred_bias == q.pred_bias, || {
            format!("block {}: classifier gradient depends on the feedback matrix", i)
        })?;
        ensure(p.weight != q.weight, || format!("block {}: dL/dH ignores the feedback matrix", i))?;
    }

    let mut net = Network::<f32>::new(spec, s, 2).map_err(e)?;
    let before = hash_feedback(&net);
    let xs: Tensor<f32> = Tensor::from_fn(&[12, 1, 4, 4], |_| rng.normal() as f32);
    for step in 0..100 {
        net.train_step(xs.clone(), &labels, 1e-3, &mut Rng::new(step)).map_err(e)?;
    }
    ensure(hash_feedback(&net) == before, || "feedback matrix changed during training".into())?;
    Ok(format!("swap changes dL/dH only; feedback hash {:016x} unchanged after 100 steps", before))
}

fn c4_similarity_laws() -> Outcome {
    let mut rng = Rng::new(4);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let n = 2 + rng.below(10);
        let d = 1 + rng.below(12);
        let x = Tensor::<f64>::from_fn(&[n, d], |_| rng.normal() * 3.0);
        // Constant rows have no direction; skip the degenerate draw.
        if (0..n).any(|i| x.row(i).iter().all(|&v| v == x.row(i)[0])) {
            continue;
        }
        let s = similarity_matrix(&x).map_err(e)?;
        let mut y = x.clone();
        for i in 0..n {
            let (a, b) = (rng.uniform_range(0.01, 100.0), rng.uniform_range(-50.0, 50.0));
            for v in y.row_mut(i) {
                *v = a * *v + b;
            }
        }
        let t = similarity_matrix(&y).map_err(e)?;
        for i in 0..n {
            ensure((s.get(i, i) - 1.0).abs() < 1e-9, || format!("trial {}: diagonal {}", trial, s.get(i, i)))?;
            for j in 0..n {
                ensure(s.get(i, j) == s.get(j, i), || format!("trial {}: asymmetric", trial))?;
                ensure(s.get(i, j).abs() <= 1.0 + 1e-12, || format!("trial {}: out of range", trial))?;
                worst = worst.max((s.get(i, j) - t.get(i, j)).abs());
            }
        }
        ensure(worst < 1e-6, || format!("trial {}: affine invariance off by {:e}", trial, worst))?;

        let classes = 2 + rng.below(20);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let target = LabelBatch::new(labels.clone(), classes).map_err(e)?.target_similarity::<f64>().map_err(e)?;
        for i in 0..n {
            for j in 0..n {
                let want = if labels[i] == labels[j] { 1.0 } else { -1.0 / (classes as f64 - 1.0) };
                ensure((target.get(i, j) - want).abs() < 1e-12, || format!("trial {}: one-hot law", trial))?;
            }
        }
    }
    Ok(format!("1000 trials, worst affine deviation {:.1e}", worst))
}

fn c5_schedule() -> Outcome {
    let s = LrSchedule::new(5e-4, 100);
    let epochs = [0, 49, 50, 74, 75, 88, 89, 93, 94, 99];
    let want = [5e-4, 5e-4, 1.25e-4, 1.25e-4, 3.125e-5, 3.125e-5, 7.8125e-6, 7.8125e-6, 1.953125e-6, 1.953125e-6];
    for (&ep, &w) in epochs.iter().zip(&want) {
        ensure(s.lr_at(ep) == w, || format!("epoch {}: {:e} != {:e}", ep, s.lr_at(ep), w))?;
    }
    Ok("10 epochs exact".into())
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn c6_mnist() -> Outcome {
    let dir = mnist_dir();
    let (train_set, test_set) =
        load_dataset("mnist", &dir).map_err(|err| format!("MNIST not available in {}: {}", dir.display(), err))?;
    let start = Instant::now();
    let mut report = Vec::new();
    let mut means = Vec::new();
    for mode in [LossMode::Glob, LossMode::Pred, LossMode::Sim, LossMode::PredSim] {
        let mut errs = Vec::new();
        for seed in 0..3 {
            let mut cfg = RunConfig::from_preset("mnist", "mlp3x256", mode).map_err(e)?;
            cfg.epochs = 15;
            cfg.lr = 5e-4;
            cfg.batch_size = 128;
            cfg.jitter = 2;
            cfg.seed = seed;
            let mut net = cfg.network(&train_set).map_err(e)?;
            let history = train(&mut net, &cfg.train_config(), &train_set, &test_set).map_err(e)?;
            errs.push(history.last().expect("15 epochs recorded").test_error);
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        report.push(format!("{} {:.2}%", mode, 100.0 * mean));
        means.push((mode, mean));
    }
    let summary = format!("{} ({:.0?})", report.join(", "), start.elapsed());
    for &(mode, mean) in &means {
        ensure(mean <= 0.030, || format!("{} mean test error {:.4} > 0.030; {}", mode, mean, summary))?;
    }
    let (pred, predsim) = (means[1].1, means[3].1);
    ensure(predsim <= pred + 0.005, || format!("predsim {:.4} > pred {:.4} + 0.005; {}", predsim, pred, summary))?;
    Ok(summary)
}

fn blob_sets(seed: u64) -> Result<(Dataset, Dataset), String> {
    let all = synthetic_blobs(3, 67, 16, 5.0, &mut Rng::new(seed)).map_err(e)?;
    let train_set = all.head(200);
    let test_set = Dataset::new(train_set.images.clone(), train_set.labels.clone(), 3, Split::Test).map_err(e)?;
    Ok((train_set, test_set))
}

fn blob_config(mode: LossMode, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(mode);
    cfg.epochs = 20;
    cfg.lr = 1e-2;
    cfg.batch_size = 32;
    cfg.seed = seed;
    cfg.block = settings(mode, 0.0);
    cfg.clean_train_error = true;
    cfg
}

fn c7_blobs() -> Outcome {
    let start = Instant::now();
    let spec = parse_arch("fc64-fc", 1, &[1, 1, 16], 3).map_err(e)?;
    let mut runs = 0;
    for mode in local_modes() {
        for seed in 0..5 {
            let (tr, te) = blob_sets(seed)?;
            let cfg = blob_config(mode, seed);
            let mut net = Network::<f32>::new(spec.clone(), cfg.block.clone(), seed).map_err(e)?;
            let h = train(&mut net, &cfg, &tr, &te).map_err(e)?;
            let err = h.last().expect("20 epochs").train_error;
            ensure(err == 0.0, || format!("{} seed {}: train error {}", mode, seed, err))?;
            runs += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {:?}", elapsed))?;
    Ok(format!("{} runs at train error 0 in {:.2?}", runs, elapsed))
}

fn c8_memory() -> Outcome {
    let spec = parse_arch("conv4-conv4-pool-conv8-conv8-pool-conv8-pool-fc16-fc", 1, &[1, 8, 8], 4).map_err(e)?;
    ensure(spec.blocks.len() == 6, || format!("{} hidden blocks", spec.blocks.len()))?;
    let mut rng = Rng::new(8);
    let x = Tensor::<f32>::from_fn(&[8, 1, 8, 8], |_| rng.normal() as f32);
    let labels = LabelBatch::new((0..8).map(|i| i % 4).collect(), 4).map_err(e)?;
    let mut peaks = Vec::new();
    for mode in [LossMode::PredSim, LossMode::Glob] {
        let mut net = Network::<f32>::new(spec.clone(), settings(mode, 0.0), 0).map_err(e)?;
        net.tracker().reset_peak();
        for step in 0..3 {
            net.train_step(x.clone(), &labels, 1e-3, &mut Rng::new(step)).map_err(e)?;
        }
        ensure(net.tracker().live() == 0, || format!("{}: caches leaked", mode))?;
        peaks.push(net.tracker().peak());
    }
    ensure(peaks == [1, 6], || format!("peak live caches predsim {} glob {}", peaks[0], peaks[1]))?;
    Ok("peak live caches: predsim 1, glob 6".into())
}

fn c9_determinism() -> Outcome {
    let spec = parse_arch("fc32-fc", 1, &[1, 1, 16], 3).map_err(e)?;
    let (tr, te) = blob_sets(0)?;
    let mut cfg = blob_config(LossMode::PredSim, 11);
    cfg.epochs = 5;
    cfg.block.dropout = 0.2;
    let run = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let mut net = Network::<f32>::new(spec.clone(), cfg.block.clone(), 11).map_err(e)?;
        let h = train(&mut net, &cfg, &tr, &te).map_err(e)?;
        Ok((h.to_csv(spec.weight_layers()).into_bytes(), net.to_checkpoint().to_bytes()))
    };
    let (csv1, ck1) = run()?;
    let (csv2, ck2) = run()?;
    ensure(csv1 == csv2, || "metrics CSV differs between identical runs".into())?;
    ensure(ck1 == ck2, || "checkpoint differs between identical runs".into())?;

    let dir = tempfile::tempdir().map_err(e)?;
    let pixels: Vec<u8> = (0..2 * 5 * 3).map(|i| (i * 37 % 256) as u8).collect();
    for stem in ["train", "t10k"] {
        std::fs::write(dir.path().join(format!("{}-images-idx3-ubyte", stem)), encode_images(2, 5, 3, &pixels)).map_err(e)?;
        std::fs::write(dir.path().join(format!("{}-labels-idx1-ubyte", stem)), encode_labels(&[4, 9])).map_err(e)?;
    }
    let (fixture, _) = load_mnist(dir.path()).map_err(e)?;
    let back: Vec<u8> = fixture.images.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    ensure(back == pixels && fixture.labels == [4, 9], || "IDX fixture did not round-trip".into())?;

    let path = dir.path().join("ck.bin");
    let ck = Checkpoint::from_bytes(&ck1).map_err(e)?;
    ck.save(&path).map_err(e)?;
    let loaded = Checkpoint::load(&path).map_err(e)?;
    ensure(loaded.to_bytes() == ck1, || "checkpoint bytes changed on save/load".into())?;
    let mut fresh = Network::<f32>::new(spec.clone(), cfg.block.clone(), 99).map_err(e)?;
    fresh.load_checkpoint(&loaded).map_err(e)?;
    ensure(fresh.to_checkpoint().to_bytes() == ck1, || "network state differs after load".into())?;
    Ok(format!("CSV {} bytes, checkpoint {} bytes identical; IDX and checkpoint round-trip", csv1.len(), ck1.len()))
}

fn c10_class_limit() -> Outcome {
    let labels: Vec<usize> = (0..6000).map(|i| (i * 7) % 100).collect();
    let mut cfg = TrainConfig::new(LossMode::PredSim);
    cfg.epochs = 8;
    cfg.batch_size = 128;
    cfg.classes_per_batch = Some(20);
    cfg.seed = 10;
    let first_drop = cfg.schedule().first_drop_epoch();
    let mut max_limited = 0;
    let mut min_free = usize::MAX;
    for epoch in 0..cfg.epochs {
        let mut streams = EpochStreams::new(cfg.seed, epoch);
        let batches = epoch_batches(&cfg, &labels, 100, epoch, &mut streams.sample).map_err(e)?;
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        ensure(seen == (0..labels.len()).collect::<Vec<_>>(), || format!("epoch {}: coverage broken", epoch))?;
        let widest = batches
            .iter()
            .map(|b| {
                let mut l: Vec<usize> = b.iter().map(|&i| labels[i]).collect();
                l.sort_unstable();
                l.dedup();
                l.len()
            })
            .max()
            .unwrap_or(0);
        if epoch < first_drop {
            ensure(widest <= 20, || format!("epoch {}: batch with {} classes", epoch, widest))?;
            max_limited = max_limited.max(widest);
        } else {
            ensure(widest > 20, || format!("epoch {}: limit still active after the first drop", epoch))?;
            min_free = min_free.min(widest);
        }
    }
    Ok(format!(
        "pre-drop max {} classes per batch, from epoch {} at least {}; every epoch covers all examples once",
        max_limited, first_drop, min_free
    ))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("1", "gradient oracle suite", c1_gradients),
        ("2", "detachment", c2_detachment),
        ("3", "feedback alignment structure", c3_feedback_alignment),
        ("4", "similarity matrix laws", c4_similarity_laws),
        ("5", "learning-rate schedule", c5_schedule),
        ("6", "MNIST desk-scale trend", c6_mnist),
        ("7", "synthetic blobs convergence", c7_blobs),
        ("8", "memory contract", c8_memory),
        ("9", "determinism and formats", c9_determinism),
        ("10", "class-limited sampler", c10_class_limit),
    ];
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.iter().any(|s| s == id) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS  {:>2} {}: {}", id, name, detail),
            Err(why) => {
                failures += 1;
                println!("FAIL  {:>2} {}: {}", id, name, why);
            }
        }
    }
    if failures > 0 {
        println!("{} acceptance criteria failed", failures);
        std::process::exit(1);
    }
}
