use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::{Scalar, Tensor};
use crate::numerics::Mode;

/// `x` for `x ≥ 0`, `slope·x` otherwise. `slope = 0` is plain ReLU.
pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

/// Backward of [`leaky_relu`], keyed on the forward input `x`.
pub fn leaky_relu_backward<T: Scalar>(grad: &Tensor<T>, x: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    grad.zip_map(x, |g, v| if v >= T::zero() { g } else { slope * g })
}

/// Per-element scale factors drawn by [`dropout`]: `0` or `1/(1−rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    scale: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn apply(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        if grad.len() != self.scale.len() {
            return Err(crate::error::dim_err!("dropout mask/grad length mismatch"));
        }
        let mut out = grad.clone();
        for (v, &s) in out.data_mut().iter_mut().zip(&self.scale) {
            *v *= s;
        }
        Ok(out)
    }
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {}", rate)));
    }
    Ok(())
}

/// Inverted dropout. Returns `None` for the mask when the op is the identity
/// (eval mode or `rate == 0`); no random numbers are drawn in that case.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.len())
        .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
        .collect();
    let mask = DropoutMask { scale };
    let out = mask.apply(x)?;
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(grad: &Tensor<T>, mask: Option<&DropoutMask<T>>) -> Result<Tensor<T>> {
    match mask {
        Some(m) => m.apply(grad),
        None => Ok(grad.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_values() {
        let x = Tensor::<f64>::from_f64(&[3], &[2.0, -1.0, 0.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.01).data(), &[2.0, -0.01, 0.0]);
        assert_eq!(leaky_relu(&x, 0.0).data(), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = Rng::new(0);
        let x = Tensor::<f32>::from_fn(&[4, 8], |i| i as f32 * 0.37 - 3.0);
        let (y, m) = dropout(&x, 0.0, &mut rng, Mode::Train).unwrap();
        assert!(m.is_none());
        assert_eq!(y, x);
        for rate in [0.0, 0.2, 0.9] {
            let (y, _) = dropout(&x, rate, &mut rng, Mode::Eval).unwrap();
            let bits: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            let expect: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, expect);
        }
    }

    #[test]
    fn dropout_rate_one_is_config_error() {
        let mut rng = Rng::new(0);
        let x = Tensor::<f32>::zeros(&[2]);
        assert!(matches!(dropout(&x, 1.0, &mut rng, Mode::Train), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = Rng::new(123);
        let x = Tensor::<f64>::full(&[1_000_000], 1.0);
        let (y, _) = dropout(&x, 0.5, &mut rng, Mode::Train).unwrap();
        let mean = y.sum() / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "mean {}", mean);
    }
}
