use rand::Rng;
use rayon::prelude::*;

use super::Param;
use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::{split5, Tensor};

/// Stride-1 convolution (cross-correlation) with "same" zero padding.
/// The kernel is stored as `[kd, kh, kw, cin, cout]`.
#[derive(Clone, Debug)]
pub struct Conv<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    kernel: [usize; 3],
    cin: usize,
    cout: usize,
    pub(crate) cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 5 || ws[0] % 2 == 0 || ws[1] % 2 == 0 || ws[2] % 2 == 0 {
            return Err(NnError::InvalidArgument(format!(
                "conv kernel must be [kd, kh, kw, cin, cout] with odd spatial extents, got {ws:?}"
            )));
        }
        let (kernel, cin, cout) = ([ws[0], ws[1], ws[2]], ws[3], ws[4]);
        bias.expect_shape("conv bias", &[cout])?;
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            kernel,
            cin,
            cout,
            cache: None,
        })
    }

    /// Uniform initialization in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot(kernel: [usize; 3], cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let taps: usize = kernel.iter().product();
        let limit = (6.0 / ((taps * cin + taps * cout) as f64)).sqrt();
        let shape = [kernel[0], kernel[1], kernel[2], cin, cout];
        let weight = Tensor::from_fn(&shape, |_| T::of(rng.random_range(-limit..limit)));
        Self::new(weight, Tensor::zeros(&[cout])).expect("glorot shapes are consistent")
    }

    pub fn kernel(&self) -> [usize; 3] {
        self.kernel
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.cin, self.cout)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, [usize; 3])> {
        let (n, sp, c) = split5("conv", x.shape())?;
        if c != self.cin {
            return Err(NnError::ShapeMismatch {
                op: "conv input channels",
                expected: vec![self.cin],
                got: vec![c],
            });
        }
        Ok((n, sp))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, sp) = self.check_input(x)?;
        let geo = Geometry::new(sp, self.kernel);
        let vol = geo.vol();
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        let mut out = vec![T::zero(); n * vol * self.cout];
        out.par_chunks_mut(vol * self.cout)
            .zip(x.data().par_chunks(vol * self.cin))
            .for_each(|(o, xi)| {
                let xpad = geo.pad(xi, self.cin);
                let flat = geo.correlate(&xpad, self.cin, w, self.cout);
                geo.extract(&flat, self.cout, o);
                for row in o.chunks_mut(self.cout) {
                    row.iter_mut().zip(b).for_each(|(v, &bv)| *v = *v + bv);
                }
            });
        Tensor::new(vec![n, sp[0], sp[1], sp[2], self.cout], out)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_impl(grad, true)
    }

    /// Accumulates weight/bias gradients only; the returned tensor is all
    /// zeros. Used for the first layer, whose input needs no gradient.
    pub fn backward_params(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_impl(grad, false)
    }

    fn backward_impl(&mut self, grad: &Tensor<T>, input_grad: bool) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or(NnError::MissingCache("conv"))?;
        let (n, sp) = self.check_input(x)?;
        grad.expect_shape("conv backward", &[n, sp[0], sp[1], sp[2], self.cout])?;
        let geo = Geometry::new(sp, self.kernel);
        let vol = geo.vol();
        let (cin, cout) = (self.cin, self.cout);
        let flipped = self.flipped_kernel();

        let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = x
            .data()
            .par_chunks(vol * cin)
            .zip(grad.data().par_chunks(vol * cout))
            .map(|(xi, gi)| {
                // input gradient: "same" correlation of the upstream gradient
                // with the spatially flipped, channel-transposed kernel
                let mut gx = vec![T::zero(); vol * cin];
                if input_grad {
                    let gpad = geo.pad(gi, cout);
                    let flat = geo.correlate(&gpad, cout, &flipped, cin);
                    geo.extract(&flat, cin, &mut gx);
                }

                let xpad = geo.pad(xi, cin);
                let gflat = geo.embed(gi, cout);
                let gw = geo.kernel_gradient(&xpad, cin, &gflat, cout);

                let mut gb = vec![T::zero(); cout];
                for row in gi.chunks(cout) {
                    gb.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                }
                (gx, gw, gb)
            })
            .collect();

        let mut gx = Vec::with_capacity(n * vol * cin);
        for (gxi, gw, gb) in &parts {
            gx.extend_from_slice(gxi);
            let acc = self.weight.grad.data_mut();
            acc.iter_mut().zip(gw).for_each(|(a, &v)| *a = *a + v);
            let acc = self.bias.grad.data_mut();
            acc.iter_mut().zip(gb).for_each(|(a, &v)| *a = *a + v);
        }
        Tensor::new(x.shape().to_vec(), gx)
    }

    /// `[kd, kh, kw, cout, cin]` kernel with every spatial axis reversed.
    fn flipped_kernel(&self) -> Vec<T> {
        let [kd, kh, kw] = self.kernel;
        let (cin, cout) = (self.cin, self.cout);
        let w = self.weight.value.data();
        let mut out = vec![T::zero(); w.len()];
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let dst_tap = (a * kh + b) * kw + c;
                    let src_tap = ((kd - 1 - a) * kh + (kh - 1 - b)) * kw + (kw - 1 - c);
                    for ci in 0..cin {
                        for co in 0..cout {
                            out[(dst_tap * cout + co) * cin + ci] = w[(src_tap * cin + ci) * cout + co];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Conv<U> {
        Conv {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            kernel: self.kernel,
            cin: self.cin,
            cout: self.cout,
            cache: None,
        }
    }
}

/// Zero-padded volume geometry for one batch item.
///
/// Outputs are first computed on a "flat" grid indexed like the padded
/// volume, `p = (d·Hp + h)·Wp + w`, so that the input row for kernel tap
/// `(a, b, c)` is simply `p + (a·Hp + b)·Wp + c`. For fixed `(a, b)` the
/// `kw·cin` values a row needs are contiguous, which lets each `(a, b)` tap
/// be a single gemm over overlapping rows of the padded input. Flat rows
/// with `h ≥ H` or `w ≥ W` are scratch and never read back.
struct Geometry {
    sp: [usize; 3],
    kernel: [usize; 3],
    padded: [usize; 3],
    pad: [usize; 3],
    rows: usize,
}

impl Geometry {
    fn new(sp: [usize; 3], kernel: [usize; 3]) -> Self {
        let pad = [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2];
        let padded = [sp[0] + 2 * pad[0], sp[1] + 2 * pad[1], sp[2] + 2 * pad[2]];
        let rows = ((sp[0] - 1) * padded[1] + sp[1] - 1) * padded[2] + sp[2];
        Self { sp, kernel, padded, pad, rows }
    }

    fn vol(&self) -> usize {
        self.sp.iter().product()
    }

    fn pad<T: Scalar>(&self, x: &[T], c: usize) -> Vec<T> {
        let [d, h, w] = self.sp;
        let [_, hp, wp] = self.padded;
        let mut out = vec![T::zero(); self.padded.iter().product::<usize>() * c];
        for i in 0..d {
            for j in 0..h {
                let src = (i * h + j) * w * c;
                let dst = (((i + self.pad[0]) * hp + j + self.pad[1]) * wp + self.pad[2]) * c;
                out[dst..dst + w * c].copy_from_slice(&x[src..src + w * c]);
            }
        }
        out
    }

    /// Dense `[vol, c]` → flat `[rows, c]`, zero on scratch rows.
    fn embed<T: Scalar>(&self, x: &[T], c: usize) -> Vec<T> {
        let [d, h, w] = self.sp;
        let [_, hp, wp] = self.padded;
        let mut out = vec![T::zero(); self.rows * c];
        for i in 0..d {
            for j in 0..h {
                let src = (i * h + j) * w * c;
                let dst = (i * hp + j) * wp * c;
                out[dst..dst + w * c].copy_from_slice(&x[src..src + w * c]);
            }
        }
        out
    }

    /// Flat `[rows, c]` → dense `[vol, c]`.
    fn extract<T: Scalar>(&self, flat: &[T], c: usize, out: &mut [T]) {
        let [d, h, w] = self.sp;
        let [_, hp, wp] = self.padded;
        for i in 0..d {
            for j in 0..h {
                let dst = (i * h + j) * w * c;
                let src = (i * hp + j) * wp * c;
                out[dst..dst + w * c].copy_from_slice(&flat[src..src + w * c]);
            }
        }
    }

    fn tap_offset(&self, a: usize, b: usize) -> usize {
        (a * self.padded[1] + b) * self.padded[2]
    }

    /// Flat `[rows, cout]` correlation of a padded input with a
    /// `[kd, kh, kw, cin, cout]` kernel.
    fn correlate<T: Scalar>(&self, xpad: &[T], cin: usize, w: &[T], cout: usize) -> Vec<T> {
        let [kd, kh, kw] = self.kernel;
        let span = kw * cin;
        let mut out = vec![T::zero(); self.rows * cout];
        let mut first = true;
        for a in 0..kd {
            for b in 0..kh {
                let lhs = &xpad[self.tap_offset(a, b) * cin..];
                let rhs = &w[(a * kh + b) * span * cout..][..span * cout];
                T::gemm(self.rows, span, cout, lhs, (cin as isize, 1), rhs, (cout as isize, 1), &mut out, (cout as isize, 1), !first);
                first = false;
            }
        }
        out
    }

    /// `[kd, kh, kw, cin, cout]` kernel gradient from a padded input and a
    /// flat upstream gradient that is zero on scratch rows.
    fn kernel_gradient<T: Scalar>(&self, xpad: &[T], cin: usize, gflat: &[T], cout: usize) -> Vec<T> {
        let [kd, kh, kw] = self.kernel;
        let span = kw * cin;
        let mut gw = vec![T::zero(); kd * kh * span * cout];
        for a in 0..kd {
            for b in 0..kh {
                let lhs = &xpad[self.tap_offset(a, b) * cin..];
                let dst = &mut gw[(a * kh + b) * span * cout..][..span * cout];
                T::gemm(span, self.rows, cout, lhs, (1, cin as isize), gflat, (cout as isize, 1), dst, (cout as isize, 1), false);
            }
        }
        gw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ones_conv(kernel: [usize; 3]) -> Conv<f64> {
        let shape = [kernel[0], kernel[1], kernel[2], 1, 1];
        Conv::new(Tensor::full(&shape, 1.0), Tensor::zeros(&[1])).unwrap()
    }

    #[test]
    fn center_delta_kernel_is_identity() {
        let mut w = Tensor::<f64>::zeros(&[3, 3, 3, 1, 1]);
        w.data_mut()[13] = 1.0;
        let conv = Conv::new(w, Tensor::zeros(&[1])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[2, 4, 5, 3, 1], |_| rng.random::<f64>());
        assert_eq!(conv.infer(&x).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_counts_in_bounds_neighbours() {
        // Brute-force oracle: each output equals the number of in-bounds
        // voxels in its 3x3x3 neighbourhood.
        let conv = ones_conv([3, 3, 3]);
        let x = Tensor::full(&[1, 4, 4, 4, 1], 1.0);
        let y = conv.infer(&x).unwrap();
        let at = |d: usize, h: usize, w: usize| y.data()[(d * 4 + h) * 4 + w];
        assert_eq!(at(1, 1, 1), 27.0);
        assert_eq!(at(2, 2, 1), 27.0);
        assert_eq!(at(0, 0, 0), 8.0);
        assert_eq!(at(3, 3, 3), 8.0);
        assert_eq!(at(0, 1, 1), 18.0);
        assert_eq!(at(0, 0, 1), 12.0);
    }

    #[test]
    fn zero_kernel_emits_bias() {
        let conv = Conv::new(Tensor::<f64>::zeros(&[3, 3, 3, 2, 3]), Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        let x = Tensor::full(&[1, 2, 2, 2, 2], 7.0);
        let y = conv.infer(&x).unwrap();
        for row in y.data().chunks(3) {
            assert_eq!(row, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv::<f64>::glorot([3, 3, 3], 2, 3, &mut rng);
        let x = Tensor::from_fn(&[1, 3, 3, 3, 2], |_| rng.random());
        let y = conv.forward(&x).unwrap();
        let gx = conv.backward(&Tensor::zeros(y.shape())).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(conv.weight.grad.data().iter().all(|&v| v == 0.0));
        assert!(conv.bias.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_gradient_is_channel_sum_of_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv::<f64>::glorot([3, 3, 3], 1, 2, &mut rng);
        let x = Tensor::from_fn(&[2, 2, 3, 3, 1], |_| rng.random());
        let y = conv.forward(&x).unwrap();
        let g = Tensor::from_fn(y.shape(), |_| rng.random::<f64>() - 0.5);
        conv.backward(&g).unwrap();
        for co in 0..2 {
            let s: f64 = g.data().iter().skip(co).step_by(2).sum();
            assert!((conv.bias.grad.data()[co] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_missing_cache() {
        let mut conv = ones_conv([3, 3, 3]);
        assert!(conv.infer(&Tensor::zeros(&[1, 2, 2, 2, 2])).is_err());
        assert!(matches!(
            conv.backward(&Tensor::zeros(&[1, 2, 2, 2, 1])),
            Err(NnError::MissingCache(_))
        ));
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv::<f64>::glorot([1, 3, 3], 2, 3, &mut rng);
        let shape = [1, 1, 5, 4, 2];
        let x = Tensor::from_fn(&shape, |_| rng.random::<f64>());
        let y = Tensor::from_fn(&shape, |_| rng.random::<f64>());
        let (a, b) = (1.7, -0.6);
        let mix = Tensor::from_fn(&shape, |i| a * x.data()[i] + b * y.data()[i]);
        let (fx, fy, fm) = (conv.infer(&x).unwrap(), conv.infer(&y).unwrap(), conv.infer(&mix).unwrap());
        for i in 0..fm.len() {
            assert!((fm.data()[i] - (a * fx.data()[i] + b * fy.data()[i])).abs() < 1e-6);
        }
    }
}
