//! Training-time augmentation. Every function works on single images
//! `[c, h, w]` or batches `[n, c, h, w]`; batches get one draw per example.

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentConfig {
    /// Maximum translation in pixels along each axis.
    pub jitter: usize,
    pub flip: bool,
    /// Side of the zeroed square, 0 for off.
    pub cutout: usize,
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.jitter == 0 && !self.flip && self.cutout == 0
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.cutout > height.min(width) {
            return Err(Error::Config(format!(
                "cutout hole {} larger than image side {}",
                self.cutout,
                height.min(width)
            )));
        }
        Ok(())
    }
}

/// `(examples, channels, height, width)` of an image or batch.
fn dims(x: &Tensor<f32>) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Dimension(format!("expected [c, h, w] or [n, c, h, w], got {:?}", x.shape()))),
    }
}

/// Translates one image by `(dx, dy)` pixels (positive: right, down),
/// filling vacated pixels with 0.
pub fn shift_image(img: &mut [f32], c: usize, h: usize, w: usize, dx: i64, dy: i64) {
    if dx == 0 && dy == 0 {
        return;
    }
    let src = img.to_vec();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (y as i64 - dy, x as i64 - dx);
                let inside = (0..h as i64).contains(&sy) && (0..w as i64).contains(&sx);
                img[(ch * h + y) * w + x] =
                    if inside { src[(ch * h + sy as usize) * w + sx as usize] } else { 0.0 };
            }
        }
    }
}

pub fn flip_image(img: &mut [f32], w: usize) {
    for row in img.chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Zeroes the `hole×hole` square whose center is `(cy, cx)`, clipped at the
/// borders.
pub fn cutout_at(img: &mut [f32], c: usize, h: usize, w: usize, hole: usize, cy: usize, cx: usize) {
    if hole == 0 {
        return;
    }
    let (y0, x0) = (cy as i64 - (hole / 2) as i64, cx as i64 - (hole / 2) as i64);
    let ys = y0.max(0) as usize..((y0 + hole as i64).max(0) as usize).min(h);
    let xs = x0.max(0) as usize..((x0 + hole as i64).max(0) as usize).min(w);
    for ch in 0..c {
        for y in ys.clone() {
            img[(ch * h + y) * w + xs.start..(ch * h + y) * w + xs.end].fill(0.0);
        }
    }
}

/// Random translation by `(dx, dy)`, each uniform in `[−radius, radius]`.
pub fn jitter(x: &Tensor<f32>, radius: usize, rng: &mut Rng) -> Result<Tensor<f32>> {
    let (_, c, h, w) = dims(x)?;
    let mut out = x.clone();
    if radius == 0 {
        return Ok(out);
    }
    let r = radius as i64;
    for img in out.data_mut().chunks_exact_mut(c * h * w) {
        let dx = rng.int_inclusive(-r, r);
        let dy = rng.int_inclusive(-r, r);
        shift_image(img, c, h, w, dx, dy);
    }
    Ok(out)
}

/// Reverses the width axis with probability 0.5.
pub fn hflip(x: &Tensor<f32>, rng: &mut Rng) -> Result<Tensor<f32>> {
    let (_, c, h, w) = dims(x)?;
    let mut out = x.clone();
    for img in out.data_mut().chunks_exact_mut(c * h * w) {
        if rng.bernoulli(0.5) {
            flip_image(img, w);
        }
    }
    Ok(out)
}

/// Zeroes a `hole×hole` square at a uniformly random center.
pub fn cutout(x: &Tensor<f32>, hole: usize, rng: &mut Rng) -> Result<Tensor<f32>> {
    let (_, c, h, w) = dims(x)?;
    let mut out = x.clone();
    if hole == 0 {
        return Ok(out);
    }
    for img in out.data_mut().chunks_exact_mut(c * h * w) {
        let cy = rng.below(h);
        let cx = rng.below(w);
        cutout_at(img, c, h, w, hole, cy, cx);
    }
    Ok(out)
}

/// Jitter, then flip, then cutout, as configured.
pub fn augment_batch(x: Tensor<f32>, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Tensor<f32>> {
    let mut x = x;
    if cfg.jitter > 0 {
        x = jitter(&x, cfg.jitter, rng)?;
    }
    if cfg.flip {
        x = hflip(&x, rng)?;
    }
    if cfg.cutout > 0 {
        x = cutout(&x, cfg.cutout, rng)?;
    }
    Ok(x)
}
