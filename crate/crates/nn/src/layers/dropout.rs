use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inverted dropout. Kept units are scaled by `1 / (1 - rate)` in training;
/// inference is the identity. The mask for training step `s` is drawn from
/// stream `s` of a ChaCha generator keyed by the layer seed.
#[derive(Clone, Debug)]
pub struct Dropout<T> {
    rate: f64,
    seed: u64,
    pub(crate) mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1), got {rate}");
        Self { rate, seed, mask: None }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let Mode::Train { step } = mode else {
            self.mask = Some(vec![T::one(); x.len()]);
            return Ok(x.clone());
        };
        let mask: Vec<T> = if self.rate == 0.0 {
            vec![T::one(); x.len()]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(step);
            let keep = T::of(1.0 / (1.0 - self.rate));
            (0..x.len())
                .map(|_| if rng.random::<f64>() < self.rate { T::zero() } else { keep })
                .collect()
        };
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.as_ref().ok_or(NnError::MissingCache("dropout"))?;
        if mask.len() != grad.len() {
            return Err(NnError::InvalidArgument("dropout backward: gradient length differs from cache".into()));
        }
        let data = grad.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
        Tensor::new(grad.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_identity_in_both_modes() {
        let x = Tensor::<f32>::from_fn(&[1, 2, 2, 2, 3], |i| i as f32);
        let mut d = Dropout::new(0.0, 9);
        assert_eq!(d.forward(&x, Mode::Train { step: 4 }).unwrap(), x);
        assert_eq!(d.forward(&x, Mode::Infer).unwrap(), x);
    }

    #[test]
    fn infer_mode_is_identity_and_train_mode_is_seeded() {
        let x = Tensor::<f64>::full(&[1, 4, 8, 8, 2], 1.0);
        let mut d = Dropout::new(0.25, 7);
        assert_eq!(d.forward(&x, Mode::Infer).unwrap(), x);
        let a = d.forward(&x, Mode::Train { step: 3 }).unwrap();
        let b = d.forward(&x, Mode::Train { step: 3 }).unwrap();
        let c = d.forward(&x, Mode::Train { step: 4 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let kept = a.data().iter().filter(|&&v| v > 0.0).count() as f64 / a.len() as f64;
        assert!((kept - 0.75).abs() < 0.05, "kept fraction {kept}");
        assert!(a.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
    }
}
