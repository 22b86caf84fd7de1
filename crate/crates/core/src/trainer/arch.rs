//! Architecture strings such as `conv128-conv256-pool-fc1024-fc`.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::{BlockKind, BlockSpec};
use crate::losses::LossConfig;
use crate::numerics::ConvGeometry;

pub const VGG8B: &str = "conv128-conv256-pool-conv256-conv512-pool-conv512-pool-conv512-pool-fc1024-fc";
pub const VGG11B: &str =
    "conv128-conv128-conv128-conv256-pool-conv256-conv512-pool-conv512-conv512-pool-conv512-pool-fc1024-fc";
pub const MLP3X1024: &str = "fc1024-fc1024-fc1024-fc";
pub const MLP3X256: &str = "fc256-fc256-fc256-fc";

/// One token of an architecture string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerToken {
    /// `convN`, optionally `convNkKsS` for kernel `K` and stride `S`
    /// (padding `K/2`). Plain `convN` is 3×3, stride 1.
    Conv { channels: usize, kernel: usize, stride: usize },
    Pool,
    /// `fcN`: hidden dense layer.
    Fc(usize),
    /// `fc`: the output classifier.
    Output,
}

impl fmt::Display for LayerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerToken::Conv { channels, kernel: 3, stride: 1 } => write!(f, "conv{}", channels),
            LayerToken::Conv { channels, kernel, stride } => write!(f, "conv{}k{}s{}", channels, kernel, stride),
            LayerToken::Pool => f.write_str("pool"),
            LayerToken::Fc(d) => write!(f, "fc{}", d),
            LayerToken::Output => f.write_str("fc"),
        }
    }
}

/// Shape of one hidden weight layer after bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub kind: BlockKind,
    pub pool_after: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub tokens: Vec<LayerToken>,
    pub width_mult: usize,
    /// Per-example input shape `[c, h, w]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub blocks: Vec<BlockShape>,
    /// Fan-in of the output layer.
    pub output_inputs: usize,
}

/// Hyperparameters shared by every hidden block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSettings {
    pub loss: LossConfig,
    pub slope: f64,
    pub dropout: f64,
}

/// Expands preset names (`vgg8b`, `vgg11b`, `mlp3x1024`, `mlp3x256`) and a
/// trailing width multiplier such as `vgg8b(2x)`. Anything else is returned
/// unchanged with multiplier 1.
pub fn expand_preset(name: &str) -> Result<(String, usize)> {
    let name = name.trim();
    let (base, mult) = match name.strip_suffix("x)").and_then(|s| s.rsplit_once('(')) {
        Some((base, m)) => {
            let m: usize = m
                .parse()
                .ok()
                .filter(|&m| m > 0)
                .ok_or_else(|| Error::Config(format!("bad width multiplier in {:?}", name)))?;
            (base, m)
        }
        None => (name, 1),
    };
    let arch = match base.to_ascii_lowercase().as_str() {
        "vgg8b" => VGG8B,
        "vgg11b" => VGG11B,
        "mlp3x1024" => MLP3X1024,
        "mlp3x256" => MLP3X256,
        _ => base,
    };
    Ok((arch.to_string(), mult))
}

fn parse_token(tok: &str) -> Result<LayerToken> {
    let bad = || Error::Config(format!("unknown architecture token {:?} (expected convN, pool, fcN or fc)", tok));
    let num = |s: &str| s.parse::<usize>().ok().filter(|&v| v > 0);
    if tok == "pool" {
        return Ok(LayerToken::Pool);
    }
    if tok == "fc" {
        return Ok(LayerToken::Output);
    }
    if let Some(rest) = tok.strip_prefix("fc") {
        return num(rest).map(LayerToken::Fc).ok_or_else(bad);
    }
    if let Some(rest) = tok.strip_prefix("conv") {
        let (ch, kernel, stride) = match rest.split_once('k') {
            None => (rest, "3", "1"),
            Some((ch, ks)) => match ks.split_once('s') {
                Some((k, s)) => (ch, k, s),
                None => (ch, ks, "1"),
            },
        };
        return match (num(ch), num(kernel), num(stride)) {
            (Some(channels), Some(kernel), Some(stride)) => Ok(LayerToken::Conv { channels, kernel, stride }),
            _ => Err(bad()),
        };
    }
    Err(bad())
}

/// Parses an architecture string into layer shapes.
///
/// `width_mult` scales conv channel counts only. `input_shape` is `[c, h, w]`.
pub fn parse_arch(s: &str, width_mult: usize, input_shape: &[usize], classes: usize) -> Result<NetworkSpec> {
    if width_mult == 0 {
        return Err(Error::Config("width multiplier must be positive".into()));
    }
    if input_shape.len() != 3 || input_shape.contains(&0) {
        return Err(Error::Config(format!("input shape must be [c, h, w] with positive extents, got {:?}", input_shape)));
    }
    if classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    let mut tokens = s.split('-').map(|t| parse_token(t.trim())).collect::<Result<Vec<_>>>()?;
    // A trailing `fc{classes}` names the output layer explicitly.
    if let Some(last) = tokens.last_mut() {
        if *last == LayerToken::Fc(classes) {
            *last = LayerToken::Output;
        }
    }
    if tokens.last() != Some(&LayerToken::Output) {
        return Err(Error::Config(format!("architecture {:?} must end with the output layer `fc` or `fc{}`", s, classes)));
    }

    // Current per-example shape; rank 1 once a dense layer has run.
    let mut shape = input_shape.to_vec();
    let mut blocks: Vec<BlockShape> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        match *tok {
            LayerToken::Conv { channels, kernel, stride } => {
                if shape.len() != 3 {
                    return Err(Error::Config(format!("token {} ({}) follows a dense layer", i, tok)));
                }
                let geom = ConvGeometry::new(kernel, stride, kernel / 2);
                let out_channels = channels * width_mult;
                let (h, w) = (extent(geom, shape[1], i)?, extent(geom, shape[2], i)?);
                blocks.push(BlockShape {
                    kind: BlockKind::Conv { in_channels: shape[0], out_channels, height: shape[1], width: shape[2], geom },
                    pool_after: false,
                });
                shape = vec![out_channels, h, w];
            }
            LayerToken::Pool => {
                let last = match blocks.last_mut() {
                    Some(b) if shape.len() == 3 && !b.pool_after => b,
                    Some(_) if shape.len() == 3 => {
                        return Err(Error::Config(format!("token {}: consecutive pools are not supported", i)));
                    }
                    Some(_) => return Err(Error::Config(format!("token {}: pool after a dense layer", i))),
                    None => return Err(Error::Config("pool cannot be the first layer".into())),
                };
                if shape[1] < 2 || shape[2] < 2 {
                    return Err(Error::Config(format!("token {}: spatial extent reaches 0 ({:?})", i, shape)));
                }
                if shape[1] % 2 != 0 || shape[2] % 2 != 0 {
                    return Err(Error::Config(format!("token {}: cannot 2×2-pool odd extent {:?}", i, shape)));
                }
                last.pool_after = true;
                shape = vec![shape[0], shape[1] / 2, shape[2] / 2];
            }
            LayerToken::Fc(outputs) => {
                let inputs = shape.iter().product();
                blocks.push(BlockShape { kind: BlockKind::Dense { inputs, outputs }, pool_after: false });
                shape = vec![outputs];
            }
            LayerToken::Output => {
                if i + 1 != tokens.len() {
                    return Err(Error::Config(format!("output layer `fc` must be last (found at token {})", i)));
                }
            }
        }
    }
    Ok(NetworkSpec {
        tokens,
        width_mult,
        input_shape: input_shape.to_vec(),
        classes,
        blocks,
        output_inputs: shape.iter().product(),
    })
}

fn extent(geom: ConvGeometry, n: usize, token: usize) -> Result<usize> {
    match geom.output_extent(n) {
        Ok(e) if e > 0 => Ok(e),
        _ => Err(Error::Config(format!("token {}: spatial extent reaches 0", token))),
    }
}

impl NetworkSpec {
    /// Number of weight layers, output included.
    pub fn weight_layers(&self) -> usize {
        self.blocks.len() + 1
    }

    /// Canonical architecture string (width multiplier not applied).
    pub fn arch_string(&self) -> String {
        self.tokens.iter().map(ToString::to_string).collect::<Vec<_>>().join("-")
    }

    pub fn block_specs(&self, settings: &BlockSettings) -> Vec<BlockSpec> {
        self.blocks
            .iter()
            .map(|b| BlockSpec {
                kind: b.kind,
                pool_after: b.pool_after,
                slope: settings.slope,
                dropout: settings.dropout,
                classes: self.classes,
                loss: settings.loss.clone(),
            })
            .collect()
    }
}
