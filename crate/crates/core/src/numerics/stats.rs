use crate::error::Result;
use crate::numerics::tensor::{Scalar, Tensor};

/// Added under the square root so the gradient stays finite at zero variance.
pub const STD_EPS: f64 = 1e-8;

/// Population standard deviation over the spatial extent of every
/// (example, channel) map: `n×c×h×w → n×c`.
pub fn std_per_feature_map<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank(4, "std_per_feature_map")?;
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let inv = T::one() / T::of(hw as f64);
    let eps = T::of(STD_EPS);
    let data = x
        .data()
        .chunks(hw)
        .map(|plane| {
            let mean = plane.iter().copied().sum::<T>() * inv;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv;
            (var + eps).sqrt()
        })
        .collect();
    Tensor::new(&[n, c], data)
}

/// Backward of [`std_per_feature_map`]: `dσ/dx_k = (x_k − μ)/(N·σ)`.
pub fn std_per_feature_map_backward<T: Scalar>(
    x: &Tensor<T>,
    std: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    std.check_same_shape(grad)?;
    let s = x.shape();
    let hw = s[2] * s[3];
    let inv = T::one() / T::of(hw as f64);
    let mut dx = x.clone();
    for ((plane, &sd), &g) in dx.data_mut().chunks_mut(hw).zip(std.data()).zip(grad.data()) {
        let mean = plane.iter().copied().sum::<T>() * inv;
        let k = g * inv / sd;
        for v in plane.iter_mut() {
            *v = (*v - mean) * k;
        }
    }
    Ok(dx)
}
