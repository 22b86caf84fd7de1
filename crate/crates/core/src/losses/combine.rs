use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// `(1−β)·pred + β·sim` for the losses and for their gradients at the hidden
/// activations.
pub fn combine<T: Scalar>(
    pred: (f64, &Tensor<T>),
    sim: (f64, &Tensor<T>),
    beta: f64,
) -> Result<(f64, Tensor<T>)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must be in [0, 1], got {}", beta)));
    }
    let loss = (1.0 - beta) * pred.0 + beta * sim.0;
    let mut grad = pred.1.scaled(T::of(1.0 - beta));
    grad.axpy(T::of(beta), sim.1)?;
    Ok((loss, grad))
}
