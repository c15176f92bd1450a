use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct Relu {
    pub(crate) mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn apply<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        Self::apply(x)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.as_ref().ok_or(NnError::MissingCache("relu"))?;
        if mask.len() != grad.len() {
            return Err(NnError::InvalidArgument("relu backward: gradient length differs from cache".into()));
        }
        let data = grad
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::new(grad.shape().to_vec(), data)
    }
}

/// Logistic output activation; maps into (0, 1).
#[derive(Clone, Debug, Default)]
pub struct Sigmoid<T> {
    pub(crate) out: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn apply(x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = Self::apply(x);
        self.out = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.out.as_ref().ok_or(NnError::MissingCache("sigmoid"))?;
        grad.expect_shape("sigmoid backward", y.shape())?;
        let data = grad
            .data()
            .iter()
            .zip(y.data())
            .map(|(&g, &s)| g * s * (T::one() - s))
            .collect();
        Tensor::new(grad.shape().to_vec(), data)
    }
}
