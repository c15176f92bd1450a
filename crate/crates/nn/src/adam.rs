use serde::{Deserialize, Serialize};

use crate::layers::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.975,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created lazily on the first
/// update, shaped like the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, epsilon: eps } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((w, &g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g.as_f64();
                let mn = b1 * m.as_f64() + (1.0 - b1) * g;
                let vn = b2 * v.as_f64() + (1.0 - b2) * g * g;
                *m = T::of(mn);
                *v = T::of(vn);
                let delta = lr * (mn / c1) / ((vn / c2).sqrt() + eps);
                *w = T::of(w.as_f64() - delta);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: f64) -> Param<f64> {
        let mut p = Param::new(Tensor::full(&[1], v));
        p.grad = Tensor::full(&[1], g);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_param(0.42, 0.0);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.update(&mut [&mut p]);
        adam.update(&mut [&mut p]);
        assert_eq!(p.value.data()[0], 0.42);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = v̂ = 1 after bias correction, so Δ = -lr / (1 + eps).
        let mut p = scalar_param(0.0, 1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.update(&mut [&mut p]);
        assert!((p.value.data()[0] - (-0.001)).abs() < 1e-6);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let run = || {
            let mut p = scalar_param(1.0, 0.0);
            let mut adam = AdamState::new(AdamConfig::default());
            for k in 0..20 {
                p.grad = Tensor::full(&[1], (k as f64).sin());
                adam.update(&mut [&mut p]);
            }
            p.value.data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
