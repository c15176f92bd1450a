//! Density estimates of metric values and how much two classes overlap.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSpec {
    pub bandwidth: Bandwidth,
    pub grid_points: usize,
}

impl Default for StatsSpec {
    fn default() -> Self {
        Self { bandwidth: Bandwidth::Auto, grid_points: 512 }
    }
}

impl StatsSpec {
    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return Err(domain("bandwidth must be positive"));
            }
        }
        if self.grid_points < 2 {
            return Err(domain("need at least 2 grid points"));
        }
        Ok(())
    }
}

/// Gaussian kernel density estimate tabulated on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    points: Vec<f64>,
}

impl Density {
    /// Exact estimate at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let s: f64 = self
            .points
            .iter()
            .map(|p| {
                let z = (x - p) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        s * INV_SQRT_2PI / (self.points.len() as f64 * h)
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    fn span(&self) -> (f64, f64) {
        (self.grid[0], *self.grid.last().expect("non-empty grid"))
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

/// 0.9·min(σ, IQR/1.34)·n^(−1/5), falling back to a scale of the mean when
/// the sample has no spread.
pub fn silverman(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 && h.is_finite() {
        h
    } else {
        (0.01 * mean.abs()).max(1e-6)
    }
}

pub fn kde(values: &[f64], spec: &StatsSpec) -> Result<Density> {
    spec.validate()?;
    if values.len() < 2 {
        return Err(domain(format!("density estimate needs at least 2 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(domain("density estimate over non-finite values"));
    }
    let h = match spec.bandwidth {
        Bandwidth::Auto => silverman(values),
        Bandwidth::Fixed(h) => h,
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let mut d = Density { grid: linspace(lo, hi, spec.grid_points), values: vec![], bandwidth: h, points: values.to_vec() };
    d.values = d.grid.iter().map(|&x| d.eval(x)).collect();
    Ok(d)
}

const OVERLAP_POINTS: usize = 4096;

/// ∫ min(p, q) over the union of both grids; each density is zero outside
/// its own grid.
pub fn overlap(a: &Density, b: &Density) -> f64 {
    let (alo, ahi) = a.span();
    let (blo, bhi) = b.span();
    let grid = linspace(alo.min(blo), ahi.max(bhi), OVERLAP_POINTS);
    let at = |d: &Density, (lo, hi): (f64, f64), x: f64| if x < lo || x > hi { 0.0 } else { d.eval(x) };
    let m: Vec<f64> = grid
        .iter()
        .map(|&x| at(a, (alo, ahi), x).min(at(b, (blo, bhi), x)))
        .collect();
    trapezoid(&grid, &m).clamp(0.0, 1.0)
}

/// Probability that a random `positive` value exceeds a random `negative`
/// one, ties counting one half.
pub fn auc(negative: &[f64], positive: &[f64]) -> Result<f64> {
    if negative.is_empty() || positive.is_empty() {
        return Err(domain("AUC needs both classes"));
    }
    let mut all: Vec<(f64, bool)> = negative
        .iter()
        .map(|&v| (v, false))
        .chain(positive.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // average of 1-based ranks i+1..=j
        let rank = (i + j + 1) as f64 / 2.0;
        rank_sum += rank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSeparation {
    pub overlap: f64,
    pub auc: f64,
    pub n_stable: usize,
    pub n_unstable: usize,
    pub bandwidth_stable: f64,
    pub bandwidth_unstable: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub split_index: usize,
    pub raw: ClassSeparation,
    pub output: ClassSeparation,
    /// Raw overlap over output overlap (the latter floored at 1e-3).
    pub reduction_factor: f64,
}

pub struct Separation {
    pub report: SeparationReport,
    pub raw: (Density, Density),
    pub output: (Density, Density),
}

fn separate(values: &[f64], split: usize, spec: &StatsSpec) -> Result<(ClassSeparation, Density, Density)> {
    let (stable, unstable) = values.split_at(split);
    let ds = kde(stable, spec)?;
    let du = kde(unstable, spec)?;
    let c = ClassSeparation {
        overlap: overlap(&ds, &du),
        auc: auc(stable, unstable)?,
        n_stable: stable.len(),
        n_unstable: unstable.len(),
        bandwidth_stable: ds.bandwidth,
        bandwidth_unstable: du.bandwidth,
    };
    Ok((c, ds, du))
}

/// Samples before `split` are stable, the rest unstable.
pub fn separation_report(raw: &[f64], output: &[f64], split: usize, spec: &StatsSpec) -> Result<Separation> {
    if raw.len() != output.len() {
        return Err(domain("raw and output traces differ in length"));
    }
    if split == 0 || split >= raw.len() {
        return Err(domain(format!("split {split} leaves a class empty in a trace of {}", raw.len())));
    }
    let (r, rs, ru) = separate(raw, split, spec)?;
    let (o, os, ou) = separate(output, split, spec)?;
    let reduction_factor = r.overlap / o.overlap.max(1e-3);
    Ok(Separation {
        report: SeparationReport { split_index: split, raw: r, output: o, reduction_factor },
        raw: (rs, ru),
        output: (os, ou),
    })
}

/// `x, p_stable, p_unstable` on a grid covering both densities.
pub fn write_density_csv(path: &Path, stable: &Density, unstable: &Density, points: usize) -> Result<()> {
    let (alo, ahi) = stable.span();
    let (blo, bhi) = unstable.span();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "p_stable", "p_unstable"])?;
    for x in linspace(alo.min(blo), ahi.max(bhi), points.max(2)) {
        w.write_record([x.to_string(), stable.eval(x).to_string(), unstable.eval(x).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(h: f64) -> StatsSpec {
        StatsSpec { bandwidth: Bandwidth::Fixed(h), grid_points: 512 }
    }

    fn std_normal_cdf(x: f64) -> f64 {
        // Simpson on [-10, x]
        let n = 20_000;
        let a = -10.0;
        let step = (x - a) / n as f64;
        let f = |t: f64| INV_SQRT_2PI * (-0.5 * t * t).exp();
        let mut s = f(a) + f(x);
        for i in 1..n {
            s += f(a + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * step / 3.0
    }

    #[test]
    fn two_point_density_at_zero() {
        let d = kde(&[-1.0, 1.0], &fixed(1.0)).unwrap();
        let phi1 = INV_SQRT_2PI * (-0.5f64).exp();
        assert!((d.eval(0.0) - phi1).abs() < 1e-12);
        assert!((d.eval(0.0) - 0.2420).abs() < 1e-4);
        assert!((d.integral() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn overlap_oracles() {
        let a = kde(&[0.0, 0.0], &fixed(1.0)).unwrap();
        assert!((overlap(&a, &a) - 1.0).abs() < 0.01);
        let far = kde(&[100.0, 100.0], &fixed(1.0)).unwrap();
        assert!(overlap(&a, &far) < 1e-3);
        let near = kde(&[2.0, 2.0], &fixed(1.0)).unwrap();
        let expect = 2.0 * std_normal_cdf(-1.0);
        assert!((expect - 0.3173).abs() < 1e-3);
        assert!((overlap(&a, &near) - expect).abs() < 0.02);
        assert!((overlap(&a, &near) - overlap(&near, &a)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sample_uses_fallback_bandwidth() {
        assert!((silverman(&[5.0; 10]) - 0.05).abs() < 1e-12);
        assert_eq!(silverman(&[0.0; 10]), 1e-6);
        assert!(kde(&[1.0], &StatsSpec::default()).is_err());
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(auc(&[1.0, 1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(auc(&[1.0, 3.0], &[2.0]).unwrap(), 0.5);
        assert!(auc(&[], &[1.0]).is_err());
    }

    #[test]
    fn report_on_identical_traces() {
        let v: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin() + if i >= 20 { 5.0 } else { 0.0 }).collect();
        let s = separation_report(&v, &v, 20, &StatsSpec::default()).unwrap();
        assert_eq!(s.report.raw, s.report.output);
        assert_eq!(s.report.output.auc, 1.0);
        assert!(s.report.output.overlap < 0.05);
        assert!(separation_report(&v, &v, 0, &StatsSpec::default()).is_err());
    }
}
