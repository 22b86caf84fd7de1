//! Adjusted cosine similarity (per-example correlation) matrices.

use crate::error::{dim_err, Error, Result};
use crate::numerics::linalg::{gemm, Trans};
use crate::numerics::{Scalar, Tensor};

/// Floor on the centered-vector norm; keeps degenerate rows finite.
pub const NORM_EPS: f64 = 1e-8;

/// `n×n` matrix of mean-centered cosine similarities between the examples
/// of a mini-batch. Symmetric, entries in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<T> {
    values: Tensor<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values.data()[i * self.n() + j]
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.values
    }
}

/// What [`similarity_backward`] needs from the forward pass.
#[derive(Debug)]
pub struct SimilarityCache<T> {
    unit: Tensor<T>,
    norms: Vec<T>,
    input_shape: Vec<usize>,
}

/// Similarity matrix of the rows of `x` (`n×…`, each example flattened).
pub fn similarity_matrix<T: Scalar>(x: &Tensor<T>) -> Result<SimilarityMatrix<T>> {
    Ok(similarity_matrix_cached(x)?.0)
}

pub fn similarity_matrix_cached<T: Scalar>(x: &Tensor<T>) -> Result<(SimilarityMatrix<T>, SimilarityCache<T>)> {
    if x.rank() < 2 {
        return Err(dim_err!("similarity_matrix needs a batch of vectors, got {:?}", x.shape()));
    }
    let n = x.batch();
    let d = x.row_len();
    if n < 2 {
        return Err(Error::Input(format!("similarity matrix needs at least 2 examples, got {}", n)));
    }
    let eps = T::of(NORM_EPS);
    let inv_d = T::one() / T::of(d as f64);
    let mut unit = x.clone().flatten_batch();
    let mut norms = Vec::with_capacity(n);
    for row in unit.data_mut().chunks_mut(d) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let mut sq = T::zero();
        for v in row.iter_mut() {
            *v -= mean;
            sq += *v * *v;
        }
        let norm = sq.sqrt().max(eps);
        for v in row.iter_mut() {
            *v = *v / norm;
        }
        norms.push(norm);
    }
    let mut s = Tensor::zeros(&[n, n]);
    gemm(n, d, n, unit.data(), Trans::No, unit.data(), Trans::Yes, T::zero(), s.data_mut());
    for i in 0..n {
        for j in i..n {
            // symmetrize exactly and clamp rounding excursions
            let v = s.data()[i * n + j].max(-T::one()).min(T::one());
            s.data_mut()[i * n + j] = v;
            s.data_mut()[j * n + i] = v;
        }
    }
    Ok((
        SimilarityMatrix { values: s },
        SimilarityCache { unit, norms, input_shape: x.shape().to_vec() },
    ))
}

/// `dL/dx` given `dL/dS`, reshaped like the forward input.
pub fn similarity_backward<T: Scalar>(cache: &SimilarityCache<T>, grad_s: &Tensor<T>) -> Result<Tensor<T>> {
    let n = cache.norms.len();
    let d = cache.unit.row_len();
    if grad_s.shape() != [n, n] {
        return Err(dim_err!("similarity grad shape {:?}, expected {}×{}", grad_s.shape(), n, n));
    }
    // S = U·Uᵀ  ⇒  dU = (G + Gᵀ)·U
    let sym = grad_s.zip_map(&grad_s.transpose()?, |a, b| a + b)?;
    let mut du = Tensor::zeros(&[n, d]);
    gemm(n, n, d, sym.data(), Trans::No, cache.unit.data(), Trans::No, T::zero(), du.data_mut());
    let eps = T::of(NORM_EPS);
    let inv_d = T::one() / T::of(d as f64);
    for (i, row) in du.data_mut().chunks_mut(d).enumerate() {
        let u = cache.unit.row(i);
        let r = cache.norms[i];
        if r > eps {
            let proj: T = row.iter().zip(u).map(|(&g, &uv)| g * uv).sum();
            for (g, &uv) in row.iter_mut().zip(u) {
                *g = (*g - uv * proj) / r;
            }
        } else {
            for g in row.iter_mut() {
                *g = *g / eps;
            }
        }
        let mean = row.iter().copied().sum::<T>() * inv_d;
        for g in row.iter_mut() {
            *g -= mean;
        }
    }
    du.reshape(&cache.input_shape)
}

/// Mean squared difference between `S(desc)` and `target` over all `n²`
/// entries, with the gradient w.r.t. `desc`.
pub fn similarity_match<T: Scalar>(desc: &Tensor<T>, target: &SimilarityMatrix<T>) -> Result<(f64, Tensor<T>)> {
    let (s, cache) = similarity_matrix_cached(desc)?;
    let n = s.n();
    if target.n() != n {
        return Err(dim_err!("target similarity is {}×{}, batch is {}", target.n(), target.n(), n));
    }
    let inv = T::one() / T::of((n * n) as f64);
    let diff = s.values.zip_map(&target.values, |a, b| a - b)?;
    let loss = diff.data().iter().map(|&v| (v * v).as_f64()).sum::<f64>() / (n * n) as f64;
    let grad_s = diff.scaled(T::of(2.0) * inv);
    Ok((loss, similarity_backward(&cache, &grad_s)?))
}
