use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0 }
    }
}

/// One bias-corrected Adam update of `param` in place.
///
/// A non-finite gradient is rejected before anything is modified.
pub fn adam_step<T: Scalar>(param: &mut Tensor<T>, grad: &Tensor<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    param.check_same_shape(grad)?;
    state.m.check_same_shape(grad)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite(format!("gradient of a {:?} parameter", grad.shape())));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let step = T::of(lr / bc1);
    let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
    let eps = T::of(ADAM_EPS);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), mi), vi) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + c1 * g;
        *vi = b2 * *vi + c2 * g * g;
        *p -= step * *mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::zeros(&[1]);
        let mut s = AdamState::new(&[1]);
        adam_step(&mut p, &Tensor::full(&[1], 1.0), &mut s, 1e-3).unwrap();
        assert!((p.data()[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut p = Tensor::<f64>::full(&[3], 0.5);
        let mut s = AdamState::new(&[3]);
        adam_step(&mut p, &Tensor::zeros(&[3]), &mut s, 1e-3).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut p = Tensor::<f64>::zeros(&[1]);
        let mut s = AdamState::new(&[1]);
        let g = Tensor::full(&[1], 0.3);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.data()[0];
            adam_step(&mut p, &g, &mut s, 1e-3).unwrap();
            last = before - p.data()[0];
        }
        assert!((last - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_rejected_untouched() {
        let mut p = Tensor::<f32>::full(&[2], 1.0);
        let mut s = AdamState::new(&[2]);
        let g = Tensor::from_f64(&[2], &[f64::NAN, 0.0]).unwrap();
        assert!(matches!(adam_step(&mut p, &g, &mut s, 1e-3), Err(Error::NonFinite(_))));
        assert_eq!(p.data(), &[1.0, 1.0]);
        assert_eq!(s.t, 0);
    }
}
