//! Per-dataset defaults for learning rate, dropout, pooled classifier input
//! size, schedule length and augmentation.

use crate::losses::LossMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchFamily {
    Mlp,
    Vgg8b,
    Vgg11b,
}

impl ArchFamily {
    /// Family of a preset name or raw architecture string.
    pub fn of(arch: &str) -> Self {
        let a = arch.to_ascii_lowercase();
        if a.starts_with("vgg11b") {
            ArchFamily::Vgg11b
        } else if a.starts_with("vgg8b") || a.contains("conv") {
            ArchFamily::Vgg8b
        } else {
            ArchFamily::Mlp
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub lr: f64,
    pub dropout: f64,
    pub pred_target_dim: usize,
    pub epochs: usize,
    pub jitter: usize,
    pub flip: bool,
    pub classes_per_batch: Option<usize>,
}

const GENERIC: Preset = Preset {
    lr: 5e-4,
    dropout: 0.0,
    pred_target_dim: 1024,
    epochs: 100,
    jitter: 0,
    flip: false,
    classes_per_batch: None,
};

pub fn preset(dataset: &str, family: ArchFamily, width_mult: usize, mode: LossMode) -> Preset {
    use ArchFamily::*;
    let wide = width_mult >= 2;
    let mut p = GENERIC;
    match dataset {
        "mnist" => {
            p.jitter = 2;
            p.dropout = if family == Mlp { 0.1 } else { 0.2 };
        }
        "fashion-mnist" => {
            p.epochs = 200;
            p.jitter = 2;
            p.flip = true;
            p.lr = if wide { 3e-4 } else { 5e-4 };
            p.pred_target_dim = if wide { 2048 } else { 1024 };
            p.dropout = match (family, wide) {
                (Mlp, _) => 0.025,
                (_, false) => 0.1,
                (_, true) => 0.2,
            };
        }
        "kmnist" => {
            p.dropout = if family == Mlp { 0.2 } else { 0.3 };
        }
        "cifar10" if mode.is_bpf() => {
            p.epochs = 400;
            p.jitter = 4;
            p.flip = true;
            p.lr = if wide { 3e-4 } else { 5e-4 };
            p.pred_target_dim = 4096;
            p.dropout = if wide { 0.1 } else { 0.05 };
        }
        "cifar10" | "cifar100" => {
            let c100 = dataset == "cifar100";
            p.epochs = 400;
            p.jitter = 4;
            p.flip = true;
            p.lr = if wide { 3e-4 } else { 5e-4 };
            p.pred_target_dim = if c100 || wide { 4096 } else { 2048 };
            p.dropout = match (family, width_mult, c100) {
                (Mlp, _, false) => 0.1,
                (Mlp, _, true) => 0.025,
                (_, 1, false) => 0.2,
                (_, 1, true) => 0.05,
                (_, 2, false) => 0.25,
                (_, 2, true) => 0.1,
                (_, _, false) => 0.3,
                (_, _, true) => 0.15,
            };
            if c100 && mode.has_sim() {
                p.classes_per_batch = Some(20);
            }
        }
        _ => {}
    }
    p
}
