use crate::error::{dim_err, Error, Result};
use crate::layers::block::Param;
use crate::numerics::linalg::{add_row_bias, column_sums, matmul, matmul_t, Trans};
use crate::numerics::{Rng, Scalar, Tensor};

/// The final dense classifier. Trained with the global cross-entropy in
/// every mode.
#[derive(Clone, Debug)]
pub struct OutputLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> OutputLayer<T> {
    pub fn init_params(inputs: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        if inputs == 0 || classes == 0 {
            return Err(Error::Config("output layer needs positive fan-in and class count".into()));
        }
        let bound = (1.0 / inputs as f64).sqrt();
        let w = Tensor::from_fn(&[inputs, classes], |_| T::of(rng.uniform_range(-bound, bound)));
        Ok(OutputLayer { weight: Param::new(w), bias: Param::new(Tensor::zeros(&[classes])) })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// Logits for a batch; `x` is flattened per example.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.row_len() != self.inputs() {
            return Err(dim_err!("output layer expects {} inputs, got {:?}", self.inputs(), x.shape()));
        }
        let flat = x.clone().flatten_batch();
        let mut z = matmul(&flat, &self.weight.value)?;
        add_row_bias(&mut z, &self.bias.value)?;
        Ok(z)
    }

    /// Parameter gradients and, if asked, `dL/dx` (shaped like `x`).
    pub fn backward(&self, x: &Tensor<T>, dlogits: &Tensor<T>, want_input_grad: bool) -> Result<(OutputGrads<T>, Option<Tensor<T>>)> {
        let flat = x.clone().flatten_batch();
        let weight = matmul_t(&flat, Trans::Yes, dlogits, Trans::No)?;
        let bias = column_sums(dlogits)?;
        let dx = if want_input_grad {
            Some(matmul_t(dlogits, Trans::No, &self.weight.value, Trans::Yes)?.reshape(x.shape())?)
        } else {
            None
        };
        Ok((OutputGrads { weight, bias }, dx))
    }

    pub fn apply_grads(&mut self, grads: &OutputGrads<T>, lr: f64) -> Result<()> {
        self.weight.step(&grads.weight, lr)?;
        self.bias.step(&grads.bias, lr)
    }
}
