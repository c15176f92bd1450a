use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::{split5, Tensor};

/// Non-overlapping max pooling. Gradients route to the first maximal
/// element of each window in (depth, height, width) scan order.
#[derive(Clone, Debug)]
pub struct MaxPool {
    window: [usize; 3],
    pub(crate) cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool {
    pub fn new(window: [usize; 3]) -> Self {
        Self { window, cache: None }
    }

    pub fn window(&self) -> [usize; 3] {
        self.window
    }

    fn out_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let (n, sp, c) = split5("maxpool", shape)?;
        let mut out = vec![n];
        for (&e, &f) in sp.iter().zip(&self.window) {
            if e % f != 0 {
                return Err(NnError::Indivisible { op: "maxpool", extent: e, factor: f });
            }
            out.push(e / f);
        }
        out.push(c);
        Ok(out)
    }

    fn run<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let out_shape = self.out_shape(x.shape())?;
        let s = x.shape();
        let (h, w, c) = (s[2], s[3], s[4]);
        let (od, oh, ow) = (out_shape[1], out_shape[2], out_shape[3]);
        let [pd, ph, pw] = self.window;
        let total: usize = out_shape.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut arg = Vec::with_capacity(total);
        let xd = x.data();
        for b in 0..s[0] {
            for d in 0..od {
                for i in 0..oh {
                    for j in 0..ow {
                        for ch in 0..c {
                            let mut best = usize::MAX;
                            let mut best_v = T::neg_infinity();
                            for a in 0..pd {
                                for p in 0..ph {
                                    for q in 0..pw {
                                        let idx = ((((b * s[1] + d * pd + a) * h + i * ph + p) * w) + j * pw + q) * c + ch;
                                        if best == usize::MAX || xd[idx] > best_v {
                                            best = idx;
                                            best_v = xd[idx];
                                        }
                                    }
                                }
                            }
                            out.push(best_v);
                            arg.push(best);
                        }
                    }
                }
            }
        }
        Ok((Tensor::new(out_shape, out)?, arg))
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x)?.0)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, arg) = self.run(x)?;
        self.cache = Some((arg, x.shape().to_vec()));
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (arg, in_shape) = self.cache.as_ref().ok_or(NnError::MissingCache("maxpool"))?;
        grad.expect_shape("maxpool backward", &self.out_shape(in_shape)?)?;
        let mut gx = Tensor::zeros(in_shape);
        let data = gx.data_mut();
        for (&i, &g) in arg.iter().zip(grad.data()) {
            data[i] = data[i] + g;
        }
        Ok(gx)
    }
}

/// Nearest-neighbour upsampling: every voxel is repeated `factor` times
/// along each spatial axis.
#[derive(Clone, Debug)]
pub struct Upsample {
    factor: [usize; 3],
    pub(crate) in_shape: Option<Vec<usize>>,
}

impl Upsample {
    pub fn new(factor: [usize; 3]) -> Self {
        Self { factor, in_shape: None }
    }

    pub fn factor(&self) -> [usize; 3] {
        self.factor
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, [d, h, w], c) = split5("upsample", x.shape())?;
        let [fd, fh, fw] = self.factor;
        let (od, oh, ow) = (d * fd, h * fh, w * fw);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * od * oh * ow * c);
        for b in 0..n {
            for i in 0..od {
                for j in 0..oh {
                    for k in 0..ow {
                        let src = (((b * d + i / fd) * h + j / fh) * w + k / fw) * c;
                        out.extend_from_slice(&xd[src..src + c]);
                    }
                }
            }
        }
        Tensor::new(vec![n, od, oh, ow, c], out)
    }

    pub(crate) fn forward_cached<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        self.in_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let in_shape = self.in_shape.as_ref().ok_or(NnError::MissingCache("upsample"))?;
        let (n, [d, h, w], c) = split5("upsample", in_shape)?;
        let [fd, fh, fw] = self.factor;
        grad.expect_shape("upsample backward", &[n, d * fd, h * fh, w * fw, c])?;
        let mut gx = Tensor::zeros(in_shape);
        let out = gx.data_mut();
        let gd = grad.data();
        let (oh, ow) = (h * fh, w * fw);
        for b in 0..n {
            for i in 0..d * fd {
                for j in 0..oh {
                    for k in 0..ow {
                        let src = (((b * d * fd + i) * oh + j) * ow + k) * c;
                        let dst = (((b * d + i / fd) * h + j / fh) * w + k / fw) * c;
                        for ch in 0..c {
                            out[dst + ch] = out[dst + ch] + gd[src + ch];
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}
