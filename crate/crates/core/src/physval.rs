//! Pressure-conditioned flame edge ensembles.
//!
//! Frames taken at instants of high pressure are edge-detected one by one and
//! the edge maps are superposed. Under ordered modulation the flame sits at
//! the same place at every such instant and the union stays thin; scattered
//! modulation smears it out.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::FrameSequence;
use crate::error::{domain, CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PressureSeries {
    values: Vec<f64>,
    fps: f64,
}

impl PressureSeries {
    pub fn new(values: Vec<f64>, fps: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("empty pressure series"));
        }
        if !(fps > 0.0) {
            return Err(domain(format!("fps must be positive, got {fps}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(domain(format!("non-finite pressure at index {i}")));
        }
        Ok(Self { values, fps })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn p_max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_s", "pressure"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([(i as f64 / self.fps).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `time_s,pressure` CSV; fps is recovered from the first time step.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "time_s" || &headers[1] != "pressure" {
            return Err(CoreError::Format(format!(
                "expected columns time_s,pressure in {}, got {:?}",
                path.display(),
                headers
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CoreError::Format(format!("bad number {s:?}: {e}")))
            };
            times.push(parse(&rec[0])?);
            values.push(parse(&rec[1])?);
        }
        if times.len() < 2 {
            return Err(CoreError::Format("pressure CSV needs at least two rows to infer fps".into()));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(CoreError::Format("pressure timestamps must increase".into()));
        }
        Self::new(values, 1.0 / dt)
    }
}

/// Indices where `p > fraction·P_max`. Empty when no sample is positive.
pub fn conditioned_instants(p: &PressureSeries, fraction: f64) -> Vec<usize> {
    let pmax = p.p_max();
    if pmax <= 0.0 {
        log::warn!("pressure series has no positive values; no conditioned instants");
        return Vec::new();
    }
    let cut = fraction * pmax;
    (0..p.len()).filter(|&i| p.values[i] > cut).collect()
}

/// `p/P_max` at conditioned instants, zero elsewhere.
pub fn normalized_conditioned_pressure(p: &PressureSeries, fraction: f64) -> Vec<f64> {
    let pmax = p.p_max();
    let mut out = vec![0.0; p.len()];
    for i in conditioned_instants(p, fraction) {
        out[i] = p.values[i] / pmax;
    }
    out
}

pub fn write_conditioned_csv(path: &Path, normalized: &[f64], fps: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_s", "normalized_value"])?;
    for (i, v) in normalized.iter().enumerate() {
        w.write_record([(i as f64 / fps).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Conditioned instants inside `window`. When the record-wide threshold
/// selects nothing there (a stable stretch next to a loud transition), the
/// threshold is re-derived from the window's own maximum; the flag reports
/// that fallback.
pub fn window_instants(p: &PressureSeries, window: Range<usize>, fraction: f64) -> (Vec<usize>, bool) {
    let global: Vec<usize> = conditioned_instants(p, fraction)
        .into_iter()
        .filter(|i| window.contains(i))
        .collect();
    if !global.is_empty() {
        return (global, false);
    }
    let end = window.end.min(p.len());
    if window.start >= end {
        return (Vec::new(), true);
    }
    let local = &p.values[window.start..end];
    let lmax = local.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lmax <= 0.0 {
        return (Vec::new(), true);
    }
    let picked = (window.start..end).filter(|&i| p.values[i] > fraction * lmax).collect();
    (picked, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysvalSpec {
    /// Share of P_max a pressure sample must exceed to condition on it.
    pub fraction: f64,
    pub canny: CannyParams,
    /// Smallest ensemble whose thinness is reported; one member is always 1.
    pub min_members: usize,
}

impl Default for PhysvalSpec {
    fn default() -> Self {
        Self { fraction: 0.7, canny: CannyParams::default(), min_members: 2 }
    }
}

impl PhysvalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(domain("conditioning fraction must lie in (0, 1)"));
        }
        if self.min_members == 0 {
            return Err(domain("min_members must be at least 1"));
        }
        self.canny.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CannyParams {
    pub sigma: f64,
    /// Weak threshold as a fraction of the largest gradient magnitude.
    pub low: f64,
    /// Strong threshold as a fraction of the largest gradient magnitude.
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { sigma: 1.4, low: 0.08, high: 0.2 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.low && self.low < self.high) {
            return Err(domain(format!(
                "canny thresholds need 0 < low < high, got low={} high={}",
                self.low, self.high
            )));
        }
        if self.sigma < 0.0 {
            return Err(domain("canny blur sigma must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl EdgeMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, mask: vec![false; height * width] }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    /// Binary PGM with maxval 1.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        write!(f, "P5\n{} {}\n1\n", self.width, self.height)?;
        let body: Vec<u8> = self.mask.iter().map(|&m| m as u8).collect();
        f.write_all(&body)?;
        Ok(())
    }
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable convolution with clamp-to-edge borders.
pub(crate) fn blur(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            tmp[i * w + j] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * img[i * w + clampi(j as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clampi(i as isize + k as isize - r, h) * w + j])
                .sum();
        }
    }
    out
}

pub fn canny(frame: &[f32], height: usize, width: usize, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    if frame.len() != height * width {
        return Err(domain(format!(
            "frame has {} pixels, expected {height}x{width}",
            frame.len()
        )));
    }
    let (h, w) = (height, width);
    let img: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
    let smooth = blur(&img, h, w, &gaussian_kernel(params.sigma));
    let at = |i: isize, j: isize| {
        smooth[i.clamp(0, h as isize - 1) as usize * w + j.clamp(0, w as isize - 1) as usize]
    };
    let mut mag = vec![0.0; h * w];
    let mut dir = vec![0u8; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let gx = at(i - 1, j + 1) + 2.0 * at(i, j + 1) + at(i + 1, j + 1)
                - at(i - 1, j - 1)
                - 2.0 * at(i, j - 1)
                - at(i + 1, j - 1);
            let gy = at(i + 1, j - 1) + 2.0 * at(i + 1, j) + at(i + 1, j + 1)
                - at(i - 1, j - 1)
                - 2.0 * at(i - 1, j)
                - at(i - 1, j + 1);
            let idx = i as usize * w + j as usize;
            mag[idx] = gx.hypot(gy);
            // angle folded into [0, 180) and binned at 0/45/90/135 degrees
            let deg = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[idx] = (((deg + 22.5) / 45.0) as u8) % 4;
        }
    }

    let mut thin = vec![0.0; h * w];
    for i in 1..h.saturating_sub(1) {
        for j in 1..w.saturating_sub(1) {
            let idx = i * w + j;
            let m = mag[idx];
            if m == 0.0 {
                continue;
            }
            // neighbours along the gradient; rows grow downward, matching gy
            let (a, b) = match dir[idx] {
                0 => (idx - 1, idx + 1),
                1 => (idx - w - 1, idx + w + 1),
                2 => (idx - w, idx + w),
                _ => (idx - w + 1, idx + w - 1),
            };
            if m >= mag[a] && m >= mag[b] {
                thin[idx] = m;
            }
        }
    }

    let peak = thin.iter().copied().fold(0.0, f64::max);
    let mut edges = EdgeMap::empty(h, w);
    // flat or numerically flat frames carry no edges
    if peak <= 1e-12 {
        return Ok(edges);
    }
    let (lo, hi) = (params.low * peak, params.high * peak);
    let mut queue: VecDeque<usize> = (0..h * w).filter(|&i| thin[i] >= hi).collect();
    for &i in &queue {
        edges.mask[i] = true;
    }
    while let Some(idx) = queue.pop_front() {
        let (i, j) = ((idx / w) as isize, (idx % w) as isize);
        for di in -1..=1isize {
            for dj in -1..=1isize {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                    continue;
                }
                let n = ni as usize * w + nj as usize;
                if !edges.mask[n] && thin[n] >= lo {
                    edges.mask[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    Ok(edges)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeEnsemble {
    pub instants: Vec<usize>,
    pub members: Vec<EdgeMap>,
    pub union: EdgeMap,
}

impl EdgeEnsemble {
    pub fn from_members(instants: Vec<usize>, members: Vec<EdgeMap>) -> Result<Self> {
        let first = members.first().ok_or_else(|| domain("edge ensemble needs at least one member"))?;
        let mut union = EdgeMap::empty(first.height, first.width);
        for m in &members {
            if (m.height, m.width) != (union.height, union.width) {
                return Err(domain("edge ensemble members differ in size"));
            }
            union.mask.iter_mut().zip(&m.mask).for_each(|(u, &v)| *u |= v);
        }
        Ok(Self { instants, members, union })
    }

    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// Edge-detects each frame at an instant inside `window` and superposes the
/// maps. `Ok(None)` signals that no instant fell inside the window.
pub fn ensemble_edges(
    seq: &FrameSequence,
    instants: &[usize],
    window: Range<usize>,
    params: &CannyParams,
) -> Result<Option<EdgeEnsemble>> {
    if window.end > seq.len() {
        return Err(domain(format!(
            "window {window:?} exceeds the {}-frame sequence",
            seq.len()
        )));
    }
    let picked: Vec<usize> = instants.iter().copied().filter(|i| window.contains(i)).collect();
    if picked.is_empty() {
        return Ok(None);
    }
    let members = picked
        .iter()
        .map(|&t| canny(seq.frame(t), seq.height(), seq.width(), params))
        .collect::<Result<Vec<_>>>()?;
    EdgeEnsemble::from_members(picked, members).map(Some)
}

/// Union edge count over mean member edge count; 1 when every member agrees.
pub fn thinness(ens: &EdgeEnsemble) -> Result<f64> {
    let total: usize = ens.members.iter().map(EdgeMap::count).sum();
    if total == 0 {
        return Err(domain("every ensemble member has an empty edge map"));
    }
    let mean = total as f64 / ens.members.len() as f64;
    Ok(ens.union.count() as f64 / mean)
}
