//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Every layer works on channels-last rank-5 tensors
//! `[batch, depth, height, width, channels]`; 2D layers are the special case
//! `depth == 1` with unit kernel/pool/upsample extent along depth.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod pool;

pub use activation::{Relu, Sigmoid};
pub use batchnorm::BatchNorm;
pub use conv::Conv;
pub use dropout::Dropout;
pub use pool::{MaxPool, Upsample};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Whether batch statistics and dropout are active. `step` seeds the
/// dropout masks so a training step is reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { step: u64 },
    Infer,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu),
    Sigmoid(Sigmoid<T>),
    MaxPool(MaxPool),
    Upsample(Upsample),
    Dropout(Dropout<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::Sigmoid(l) => Ok(l.forward(x)),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Upsample(l) => l.forward_cached(x),
            Layer::Dropout(l) => l.forward(x, mode),
        }
    }

    /// Stateless evaluation; leaves caches and running statistics untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Relu(_) => Ok(Relu::apply(x)),
            Layer::Sigmoid(_) => Ok(Sigmoid::apply(x)),
            Layer::MaxPool(l) => l.infer(x),
            Layer::Upsample(l) => l.forward(x),
            Layer::Dropout(_) => Ok(x.clone()),
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::Sigmoid(l) => l.backward(grad),
            Layer::MaxPool(l) => l.backward(grad),
            Layer::Upsample(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
        }
    }

    /// Trainable parameters, in a fixed order, with their local names.
    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        match self {
            Layer::Conv(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        match self {
            Layer::Conv(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &mut l.gamma), ("beta", &mut l.beta)],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state that must be checkpointed.
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    /// Parameter values followed by buffers, matching `params` + `buffers`.
    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Conv(l) => vec![("weight", &mut l.weight.value), ("bias", &mut l.bias.value)],
            Layer::BatchNorm(l) => vec![
                ("gamma", &mut l.gamma.value),
                ("beta", &mut l.beta.value),
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.cache = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::Relu(l) => l.mask = None,
            Layer::Sigmoid(l) => l.out = None,
            Layer::MaxPool(l) => l.cache = None,
            Layer::Upsample(l) => l.in_shape = None,
            Layer::Dropout(l) => l.mask = None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv(l) => Layer::Conv(l.cast()),
            Layer::BatchNorm(l) => Layer::BatchNorm(l.cast()),
            Layer::Relu(_) => Layer::Relu(Relu::default()),
            Layer::Sigmoid(_) => Layer::Sigmoid(Sigmoid::default()),
            Layer::MaxPool(l) => Layer::MaxPool(MaxPool::new(l.window())),
            Layer::Upsample(l) => Layer::Upsample(Upsample::new(l.factor())),
            Layer::Dropout(l) => Layer::Dropout(Dropout::new(l.rate(), l.seed())),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::Sigmoid(_) => "sigmoid",
            Layer::MaxPool(_) => "maxpool",
            Layer::Upsample(_) => "upsample",
            Layer::Dropout(_) => "dropout",
        }
    }
}
