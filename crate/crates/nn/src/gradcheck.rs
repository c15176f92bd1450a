//! Central finite-difference verification of hand-written backward passes.
//!
//! The numeric side always runs in `f64` on a widened copy of the model, so
//! it serves as an independent oracle for both the `f32` and `f64` paths.
//! Entries whose `±h` evaluations take different ReLU or max-pool branches
//! straddle a kink, where a difference quotient is not a derivative; they
//! are left out of the comparison and counted.

use crate::error::Result;
use crate::layers::{Layer, Mode};
use crate::loss::mse_loss;
use crate::scalar::Scalar;
use crate::sequential::Sequential;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Fourth-order central stencil `(-f(2h) + 8f(h) - 8f(-h) + f(-2h)) / 12h`
    /// instead of `(f(h) - f(-h)) / 2h`.
    pub five_point: bool,
    pub tolerance: f64,
    /// Entries with magnitude below `floor_fraction · max|g|`, the maximum
    /// taken over every checked gradient, are compared on that absolute scale
    /// instead of their own. Without it, gradients that vanish identically
    /// (a conv bias feeding batch statistics) compare rounding noise to itself.
    pub floor_fraction: f64,
    /// Upper bound on checked entries per tensor (evenly strided).
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            five_point: false,
            tolerance: 1e-6,
            floor_fraction: 1e-3,
            max_per_tensor: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
    /// Entries skipped because the perturbation crossed a kink.
    pub kinks: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Named gradients: `"input"` first, then every parameter in model order.
pub type Gradients = Vec<(String, Tensor<f64>)>;

/// Analytic gradients of `mse(model(x), target)` via the layers' backward passes.
pub fn analytic_gradients<T: Scalar>(
    model: &Sequential<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    mode: Mode,
) -> Result<Gradients> {
    let mut m = model.clone();
    m.zero_grad();
    let y = m.forward(input, mode)?;
    let (_, g) = mse_loss(&y, target)?;
    let gx = m.backward(&g)?;
    let mut out = vec![("input".to_string(), gx.cast())];
    out.extend(m.params().into_iter().map(|(n, p)| (n, p.grad.cast())));
    Ok(out)
}

fn loss_at(model: &mut Sequential<f64>, x: &Tensor<f64>, target: &Tensor<f64>, mode: Mode) -> Result<f64> {
    let y = model.forward(x, mode)?;
    Ok(mse_loss(&y, target)?.0)
}

/// ReLU masks and max-pool winners of the last forward pass.
fn branches(model: &Sequential<f64>) -> Vec<usize> {
    let mut out = Vec::new();
    for (_, layer) in model.layers() {
        match layer {
            Layer::Relu(r) => out.extend(r.mask.iter().flatten().map(|&b| b as usize)),
            Layer::MaxPool(p) => out.extend(p.cache.iter().flat_map(|(arg, _)| arg.iter().copied())),
            _ => {}
        }
    }
    out
}

fn picked(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// One central difference: `eval(s)` returns the loss at offset `s` and the
/// branches it took. `None` when the evaluations branch differently.
fn difference(h: f64, five_point: bool, mut eval: impl FnMut(f64) -> Result<(f64, Vec<usize>)>) -> Result<Option<f64>> {
    let (lp, bp) = eval(h)?;
    let (lm, bm) = eval(-h)?;
    if bp != bm {
        return Ok(None);
    }
    if !five_point {
        return Ok(Some((lp - lm) / (2.0 * h)));
    }
    let (lpp, bpp) = eval(2.0 * h)?;
    let (lmm, bmm) = eval(-2.0 * h)?;
    if bpp != bp || bmm != bp {
        return Ok(None);
    }
    Ok(Some((8.0 * (lp - lm) - (lpp - lmm)) / (12.0 * h)))
}

/// Central differences of the same loss, computed in `f64`, plus the number
/// of entries skipped at kinks. Unchecked entries (kinks, or beyond
/// `max_per_tensor`) are NaN.
pub fn numeric_gradients<T: Scalar>(
    model: &Sequential<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    mode: Mode,
    cfg: &GradCheckConfig,
) -> Result<(Gradients, usize)> {
    let mut m = model.cast::<f64>();
    let x = input.cast::<f64>();
    let t = target.cast::<f64>();
    let h = cfg.step;
    let mut kinks = 0;
    let mut record = |d: Option<f64>| {
        d.unwrap_or_else(|| {
            kinks += 1;
            f64::NAN
        })
    };

    let mut gx = Tensor::full(x.shape(), f64::NAN);
    for i in picked(x.len(), cfg.max_per_tensor) {
        let d = difference(h, cfg.five_point, |s| {
            let mut xs = x.clone();
            xs.data_mut()[i] += s;
            let l = loss_at(&mut m, &xs, &t, mode)?;
            Ok((l, branches(&m)))
        })?;
        gx.data_mut()[i] = record(d);
    }
    let mut out = vec![("input".to_string(), gx)];

    let count = m.params().len();
    for k in 0..count {
        let (name, len, shape) = {
            let params = m.params();
            let (n, p) = &params[k];
            (n.clone(), p.value.len(), p.value.shape().to_vec())
        };
        let mut g = Tensor::full(&shape, f64::NAN);
        for i in picked(len, cfg.max_per_tensor) {
            let orig = m.params()[k].1.value.data()[i];
            let d = difference(h, cfg.five_point, |s| {
                m.params_mut()[k].1.value.data_mut()[i] = orig + s;
                let l = loss_at(&mut m, &x, &t, mode)?;
                Ok((l, branches(&m)))
            })?;
            m.params_mut()[k].1.value.data_mut()[i] = orig;
            g.data_mut()[i] = record(d);
        }
        out.push((name, g));
    }
    Ok((out, kinks))
}

/// Compares two gradient sets entry by entry; NaN oracle entries are skipped.
pub fn compare_gradients(analytic: &Gradients, numeric: &(Gradients, usize), cfg: &GradCheckConfig) -> GradCheckReport {
    let (numeric, kinks) = (&numeric.0, numeric.1);
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let scale = numeric
        .iter()
        .flat_map(|(_, n)| n.data())
        .filter(|v| !v.is_nan())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (cfg.floor_fraction * scale).max(1e-12);
    for ((name, a), (_, n)) in analytic.iter().zip(numeric) {
        for (i, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            if nv.is_nan() {
                continue;
            }
            checked += 1;
            let rel = (av - nv).abs() / av.abs().max(nv.abs()).max(floor);
            if rel > worst.0 || !rel.is_finite() {
                worst = (rel, format!("{name}[{i}]"));
            }
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst: worst.1,
        checked,
        kinks,
        tolerance: cfg.tolerance,
        passed: checked > 0 && worst.0 < cfg.tolerance,
    }
}

/// Runs the full check: analytic gradients in `T`, oracle in `f64`.
pub fn grad_check<T: Scalar>(
    model: &Sequential<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    mode: Mode,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let a = analytic_gradients(model, input, target, mode)?;
    let n = numeric_gradients(model, input, target, mode, cfg)?;
    Ok(compare_gradients(&a, &n, cfg))
}
