use super::{Mode, Param};
use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel normalization over every axis except the trailing channel axis.
///
/// Running statistics follow `running = (1 - momentum)·running + momentum·batch`
/// and use the biased batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    pub(crate) cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
pub(crate) struct BnCache<T> {
    /// Normalized input x̂.
    xhat: Tensor<T>,
    inv_std: Vec<f64>,
    train: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        let c = self.channels();
        match x.shape().last() {
            Some(&last) if last == c => Ok(x.len() / c),
            _ => Err(NnError::ShapeMismatch {
                op: "batchnorm channels",
                expected: vec![c],
                got: x.shape().to_vec(),
            }),
        }
    }

    fn batch_stats(&self, x: &Tensor<T>, count: usize) -> (Vec<f64>, Vec<f64>) {
        let c = self.channels();
        // Shifted by the first row: exact for constant channels.
        let shift: Vec<f64> = x.data()[..c].iter().map(|v| v.as_f64()).collect();
        let mut mean = vec![0.0; c];
        for row in x.data().chunks(c) {
            for ((m, v), s) in mean.iter_mut().zip(row).zip(&shift) {
                *m += v.as_f64() - s;
            }
        }
        for (m, s) in mean.iter_mut().zip(&shift) {
            *m = s + *m / count as f64;
        }
        let mut var = vec![0.0; c];
        for row in x.data().chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.as_f64() - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= count as f64);
        (mean, var)
    }

    fn normalize(&self, x: &Tensor<T>, mean: &[f64], inv_std: &[f64]) -> (Tensor<T>, Tensor<T>) {
        let c = self.channels();
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for row in x.data().chunks(c) {
            for ch in 0..c {
                let h = (row[ch].as_f64() - mean[ch]) * inv_std[ch];
                xhat.push(T::of(h));
                y.push(T::of(h * g[ch].as_f64() + b[ch].as_f64()));
            }
        }
        let shape = x.shape().to_vec();
        (
            Tensor::new(shape.clone(), xhat).expect("same length"),
            Tensor::new(shape, y).expect("same length"),
        )
    }

    fn running(&self) -> (Vec<f64>, Vec<f64>) {
        let mean = self.running_mean.data().iter().map(|v| v.as_f64()).collect();
        let inv = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v.as_f64() + self.eps).sqrt())
            .collect();
        (mean, inv)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let (mean, inv) = self.running();
        Ok(self.normalize(x, &mean, &inv).1)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let count = self.check(x)?;
        let (mean, inv_std, train) = if mode.is_train() {
            if count < 2 {
                return Err(NnError::InvalidArgument(format!(
                    "batchnorm needs at least 2 values per channel in train mode, got {count}"
                )));
            }
            let (mean, var) = self.batch_stats(x, count);
            let m = self.momentum;
            for (r, &bm) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                *r = T::of((1.0 - m) * r.as_f64() + m * bm);
            }
            for (r, &bv) in self.running_var.data_mut().iter_mut().zip(&var) {
                *r = T::of((1.0 - m) * r.as_f64() + m * bv);
            }
            let inv = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            (mean, inv, true)
        } else {
            let (mean, inv) = self.running();
            (mean, inv, false)
        };
        let (xhat, y) = self.normalize(x, &mean, &inv_std);
        self.cache = Some(BnCache { xhat, inv_std, train });
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or(NnError::MissingCache("batchnorm"))?;
        grad.expect_shape("batchnorm backward", cache.xhat.shape())?;
        let c = self.channels();
        let count = (grad.len() / c) as f64;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (gr, xr) in grad.data().chunks(c).zip(cache.xhat.data().chunks(c)) {
            for ch in 0..c {
                let g = gr[ch].as_f64();
                sum_g[ch] += g;
                sum_gx[ch] += g * xr[ch].as_f64();
            }
        }
        for ch in 0..c {
            let gg = &mut self.gamma.grad.data_mut()[ch];
            *gg = T::of(gg.as_f64() + sum_gx[ch]);
            let gb = &mut self.beta.grad.data_mut()[ch];
            *gb = T::of(gb.as_f64() + sum_g[ch]);
        }
        let gamma: Vec<f64> = self.gamma.value.data().iter().map(|v| v.as_f64()).collect();
        let mut gx = Vec::with_capacity(grad.len());
        for (gr, xr) in grad.data().chunks(c).zip(cache.xhat.data().chunks(c)) {
            for ch in 0..c {
                let scale = gamma[ch] * cache.inv_std[ch];
                let g = gr[ch].as_f64();
                let v = if cache.train {
                    scale * (g - sum_g[ch] / count - xr[ch].as_f64() * sum_gx[ch] / count)
                } else {
                    scale * g
                };
                gx.push(T::of(v));
            }
        }
        Tensor::new(grad.shape().to_vec(), gx)
    }

    pub fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
            cache: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut bn = BatchNorm::<f64>::new(2);
        let x = Tensor::full(&[2, 1, 3, 3, 2], 0.37);
        let y = bn.forward(&x, Mode::Train { step: 0 }).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = bn.backward(&Tensor::full(y.shape(), 1.0)).unwrap();
        assert!(g.all_finite());
    }

    #[test]
    fn infer_mode_applies_running_affine_map() {
        let mut bn = BatchNorm::<f64>::new(1);
        bn.running_mean = Tensor::full(&[1], 0.5);
        bn.running_var = Tensor::full(&[1], 4.0);
        bn.gamma.value = Tensor::full(&[1], 3.0);
        bn.beta.value = Tensor::full(&[1], -1.0);
        let x = Tensor::full(&[1, 1, 1, 1, 1], 2.5);
        let y = bn.infer(&x).unwrap();
        let expected = (2.5 - 0.5) / (4.0f64 + 1e-5).sqrt() * 3.0 - 1.0;
        assert!((y.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor::new(vec![1, 1, 1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward(&x, Mode::Train { step: 0 }).unwrap();
        assert!((bn.running_mean.data()[0] - 0.25).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 1.25)).abs() < 1e-12);
        assert!(bn.forward(&Tensor::full(&[1, 1, 1, 1, 1], 1.0), Mode::Train { step: 0 }).is_err());
    }
}
