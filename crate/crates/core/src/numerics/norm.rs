//! Batch normalization over the channel axis (axis 1).
//!
//! Dense activations `n×d` normalize each of the `d` units over the batch;
//! conv activations `n×c×h×w` normalize each channel over `n·h·w`.

use crate::error::{dim_err, Error, Result};
use crate::numerics::tensor::{Scalar, Tensor};
use crate::numerics::Mode;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Exponential moving averages used in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(features: usize) -> Self {
        RunningStats { mean: Tensor::zeros(&[features]), var: Tensor::full(&[features], T::one()) }
    }
}

#[derive(Debug)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(dim_err!("batchnorm expects rank 2 or 4, got {:?}", shape)),
    }
}

/// Normalizes `x` per feature and applies `gamma`, `beta`.
///
/// Train mode uses the batch mean and population variance and folds them into
/// `running` (momentum 0.1, unbiased variance for the running estimate).
/// Eval mode uses `running` and leaves it untouched.
pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, inner) = layout(x.shape())?;
    if gamma.len() != c || beta.len() != c || running.mean.len() != c {
        return Err(dim_err!("batchnorm parameters do not match {} features", c));
    }
    let count = n * inner;
    let eps = T::of(BN_EPS);
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Input(format!(
                    "batchnorm in train mode needs a batch of at least 2, got {}",
                    n
                )));
            }
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for (idx, plane) in x.data().chunks(inner).enumerate() {
                mean[idx % c] += plane.iter().copied().sum();
            }
            let inv_count = T::one() / T::of(count as f64);
            for m in &mut mean {
                *m *= inv_count;
            }
            for (idx, plane) in x.data().chunks(inner).enumerate() {
                let m = mean[idx % c];
                var[idx % c] += plane.iter().map(|&v| (v - m) * (v - m)).sum();
            }
            for v in &mut var {
                *v *= inv_count;
            }
            let mom = T::of(BN_MOMENTUM);
            let unbias = T::of(count as f64 / (count as f64 - 1.0));
            for j in 0..c {
                let rm = &mut running.mean.data_mut()[j];
                *rm = (T::one() - mom) * *rm + mom * mean[j];
                let rv = &mut running.var.data_mut()[j];
                *rv = (T::one() - mom) * *rv + mom * var[j] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    let mut out = x.clone();
    for (idx, (hp, op)) in xhat
        .data_mut()
        .chunks_mut(inner)
        .zip(out.data_mut().chunks_mut(inner))
        .enumerate()
    {
        let j = idx % c;
        let (m, s, g, b) = (mean[j], inv_std[j], gamma.data()[j], beta.data()[j]);
        for (h, o) in hp.iter_mut().zip(op.iter_mut()) {
            *h = (*h - m) * s;
            *o = g * *h + b;
        }
    }
    Ok((out, BatchNormCache { xhat, inv_std, mode }))
}

/// Returns `(dL/dx, dL/dgamma, dL/dbeta)`. In train mode this includes the
/// coupling through the batch mean and variance.
pub fn batchnorm_backward<T: Scalar>(
    grad: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    grad.check_same_shape(&cache.xhat)?;
    let (n, c, inner) = layout(grad.shape())?;
    let count = T::of((n * inner) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (idx, (gp, hp)) in grad.data().chunks(inner).zip(cache.xhat.data().chunks(inner)).enumerate() {
        let j = idx % c;
        for (&g, &h) in gp.iter().zip(hp) {
            dgamma[j] += g * h;
            dbeta[j] += g;
        }
    }
    let mut dx = grad.clone();
    for (idx, (dp, hp)) in dx.data_mut().chunks_mut(inner).zip(cache.xhat.data().chunks(inner)).enumerate() {
        let j = idx % c;
        let scale = gamma.data()[j] * cache.inv_std[j];
        match cache.mode {
            Mode::Train => {
                // dxhat = g·gamma; dx = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                let sum_g = dbeta[j];
                let sum_gh = dgamma[j];
                for (d, &h) in dp.iter_mut().zip(hp) {
                    *d = scale * (*d - (sum_g + h * sum_gh) / count);
                }
            }
            Mode::Eval => {
                for d in dp.iter_mut() {
                    *d *= scale;
                }
            }
        }
    }
    Ok((dx, Tensor::new(&[c], dgamma)?, Tensor::new(&[c], dbeta)?))
}
