use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::layers::{Layer, Mode, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered stack of named layers.
#[derive(Clone, Debug, Default)]
pub struct Sequential<T> {
    layers: Vec<(String, Layer<T>)>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer<T>) {
        self.layers.push((name.into(), layer));
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Layer<T>)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (_, layer) in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Inference without touching any cached state.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (_, layer) in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Like `backward` but skips the input gradient of a leading convolution;
    /// parameter gradients are identical.
    pub fn backward_params(&mut self, grad: &Tensor<T>) -> Result<()> {
        let mut g = grad.clone();
        for (i, (_, layer)) in self.layers.iter_mut().enumerate().rev() {
            g = match layer {
                Layer::Conv(conv) if i == 0 => conv.backward_params(&g)?,
                _ => layer.backward(&g)?,
            };
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|(_, l)| l.clear_cache());
    }

    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        self.layers
            .iter()
            .flat_map(|(ln, l)| l.params().into_iter().map(move |(pn, p)| (format!("{ln}.{pn}"), p)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.layers
            .iter_mut()
            .flat_map(|(ln, l)| {
                let ln = ln.clone();
                l.params_mut().into_iter().map(move |(pn, p)| (format!("{ln}.{pn}"), p))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Parameter values followed by running buffers, per layer, in order.
    pub fn state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (ln, l) in &self.layers {
            for (pn, p) in l.params() {
                out.push((format!("{ln}.{pn}"), &p.value));
            }
            for (bn, b) in l.buffers() {
                out.push((format!("{ln}.{bn}"), b));
            }
        }
        out
    }

    /// Replaces every state tensor by name; all names must be present with
    /// matching shapes.
    pub fn load_state(&mut self, mut tensors: HashMap<String, Tensor<T>>) -> Result<()> {
        for (ln, l) in &mut self.layers {
            for (local, slot) in l.state_mut() {
                let name = format!("{ln}.{local}");
                let t = tensors
                    .remove(&name)
                    .ok_or_else(|| NnError::Format(format!("missing tensor {name}")))?;
                if t.shape() != slot.shape() {
                    return Err(NnError::ShapeMismatch {
                        op: "load_state",
                        expected: slot.shape().to_vec(),
                        got: t.shape().to_vec(),
                    });
                }
                *slot = t;
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        Sequential {
            layers: self.layers.iter().map(|(n, l)| (n.clone(), l.cast())).collect(),
        }
    }
}
