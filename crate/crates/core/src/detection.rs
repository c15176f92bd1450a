//! Instability metric over reconstructed samples, and event extraction.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{make_volumes, FrameSequence, SamplingSpec, VolumetricSample};
use crate::error::{domain, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSpec {
    /// Reference intensity standing in for the all-masked frame.
    pub epsilon: f64,
    pub filter_size: usize,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self { epsilon: 1e-6, filter_size: 6 }
    }
}

impl MetricSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.filter_size == 0 {
            return Err(domain("metric needs epsilon > 0 and filter_size >= 1"));
        }
        Ok(())
    }

    /// Metric of an all-ones frame with `pixels` pixels.
    pub fn max_frame_metric(&self, pixels: usize) -> f64 {
        pixels as f64 * (1.0 / self.epsilon).ln()
    }
}

/// Σ I·ln(I/ε) over pixels brighter than ε; dimmer pixels contribute 0.
pub fn kl_metric(frame: &[f32], spec: &MetricSpec) -> f64 {
    let eps = spec.epsilon;
    frame
        .iter()
        .map(|&v| v as f64)
        .filter(|&v| v > eps)
        .map(|v| v * (v / eps).ln())
        .sum()
}

pub fn sample_metric(sample: &VolumetricSample, spec: &MetricSpec) -> f64 {
    sample.frames().map(|f| kl_metric(f, spec)).sum::<f64>() / sample.depth as f64
}

/// size×size box mean. The pixel sits at offset ⌈size/2⌉−1 inside its window
/// and out-of-frame taps replicate the nearest edge pixel.
pub fn mean_filter(frame: &[f32], height: usize, width: usize, size: usize) -> Vec<f32> {
    if size <= 1 {
        return frame.to_vec();
    }
    let anchor = size.div_ceil(2) as isize - 1;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    // separable: rows then columns
    let mut tmp = vec![0.0f64; height * width];
    for i in 0..height {
        for j in 0..width {
            let start = j as isize - anchor;
            tmp[i * width + j] = (0..size as isize)
                .map(|k| frame[i * width + clampi(start + k, width)] as f64)
                .sum();
        }
    }
    let norm = (size * size) as f64;
    let mut out = vec![0.0f32; height * width];
    for i in 0..height {
        let start = i as isize - anchor;
        for j in 0..width {
            let s: f64 = (0..size as isize).map(|k| tmp[clampi(start + k, height) * width + j]).sum();
            out[i * width + j] = (s / norm) as f32;
        }
    }
    out
}

/// Anything that maps volumetric samples to same-shaped reconstructions.
pub trait Reconstructor: Sync {
    /// Expected [depth, height, width] of each sample.
    fn sample_shape(&self) -> Option<[usize; 3]>;

    fn reconstruct(&self, batch: &[VolumetricSample]) -> Result<Vec<Vec<f32>>>;
}

/// Passes samples through untouched; gives the raw-input metric.
pub struct Identity;

impl Reconstructor for Identity {
    fn sample_shape(&self) -> Option<[usize; 3]> {
        None
    }

    fn reconstruct(&self, batch: &[VolumetricSample]) -> Result<Vec<Vec<f32>>> {
        Ok(batch.iter().map(|s| s.voxels.clone()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstabilityTrace {
    pub values: Vec<f64>,
    pub times: Vec<f64>,
}

impl InstabilityTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

const TRACE_BATCH: usize = 8;

/// Metric of each mean-filtered reconstruction, one value per sample.
pub fn trace<R: Reconstructor + ?Sized>(
    model: &R,
    seq: &FrameSequence,
    sampling: &SamplingSpec,
    spec: &MetricSpec,
) -> Result<InstabilityTrace> {
    spec.validate()?;
    let samples = make_volumes(seq, sampling)?;
    if let Some(shape) = model.sample_shape() {
        let got = [sampling.frames_per_sample, seq.height(), seq.width()];
        if shape != got {
            return Err(domain(format!(
                "model expects samples of {shape:?}, video gives {got:?}"
            )));
        }
    }
    let mut values = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(TRACE_BATCH) {
        let outs = model.reconstruct(chunk)?;
        let metrics: Vec<f64> = chunk
            .par_iter()
            .zip(outs)
            .map(|(s, voxels)| {
                let mut filtered = Vec::with_capacity(voxels.len());
                for f in voxels.chunks(s.height * s.width) {
                    filtered.extend(mean_filter(f, s.height, s.width, spec.filter_size));
                }
                let rec = VolumetricSample { voxels: filtered, ..s.clone() };
                sample_metric(&rec, spec)
            })
            .collect();
        values.extend(metrics);
    }
    let fps = seq.fps() as f64;
    let half = (sampling.frames_per_sample - 1) as f64 / 2.0;
    let times = (0..values.len())
        .map(|i| (sampling.first_frame(i) as f64 + half) / fps)
        .collect();
    Ok(InstabilityTrace { values, times })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventSpec {
    /// Leading share of the trace that defines the stable baseline.
    pub stable_fraction: f64,
    pub lambda: f64,
    /// Minimum threshold margin as a share of the largest achievable metric.
    pub abs_floor_fraction: f64,
    /// Consecutive above-threshold samples that make a transition.
    pub min_run: usize,
}

impl Default for EventSpec {
    fn default() -> Self {
        Self { stable_fraction: 0.1, lambda: 4.0, abs_floor_fraction: 0.01, min_run: 10 }
    }
}

impl EventSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.stable_fraction > 0.0 && self.stable_fraction <= 1.0) {
            return Err(domain("stable_fraction must lie in (0, 1]"));
        }
        if !(self.lambda >= 0.0) || !(self.abs_floor_fraction >= 0.0) || self.min_run == 0 {
            return Err(domain("event thresholds must be non-negative and min_run >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Events {
    pub peaks: Vec<usize>,
    pub transition: Option<usize>,
    pub threshold: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
}

/// Thresholds the trace at μ + max(λσ, floor) with μ, σ from the leading
/// stable window and `floor = abs_floor_fraction · max_metric`. The first run
/// of at least `min_run` samples above it is the transition; each shorter run
/// before it contributes its highest sample as a peak.
pub fn find_events(values: &[f64], max_metric: f64, spec: &EventSpec) -> Result<Events> {
    spec.validate()?;
    if values.is_empty() {
        return Err(domain("empty trace"));
    }
    let window = ((values.len() as f64 * spec.stable_fraction).ceil() as usize).clamp(1, values.len());
    let base = &values[..window];
    let mean = base.iter().sum::<f64>() / window as f64;
    let std = (base.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64).sqrt();
    let threshold = mean + (spec.lambda * std).max(spec.abs_floor_fraction * max_metric);

    let mut peaks = Vec::new();
    let mut transition = None;
    let mut i = 0;
    while i < values.len() {
        if values[i] <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < values.len() && values[i] > threshold {
            i += 1;
        }
        if i - start >= spec.min_run {
            transition = Some(start);
            break;
        }
        let top = (start..i)
            .reduce(|a, b| if values[b] > values[a] { b } else { a })
            .expect("non-empty run");
        peaks.push(top);
    }
    Ok(Events { peaks, transition, threshold, baseline_mean: mean, baseline_std: std })
}

pub fn write_trace_csv(path: &Path, raw: &InstabilityTrace, out: &InstabilityTrace, events: &Events) -> Result<()> {
    if raw.len() != out.len() {
        return Err(domain("raw and output traces differ in length"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_index", "time_s", "metric_raw_input", "metric_csae_output", "is_peak", "is_transition"])?;
    for i in 0..out.len() {
        w.write_record([
            i.to_string(),
            out.times[i].to_string(),
            raw.values[i].to_string(),
            out.values[i].to_string(),
            (events.peaks.contains(&i) as u8).to_string(),
            ((events.transition == Some(i)) as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Raw and output metric columns of a trace CSV.
pub fn read_trace_csv(path: &Path) -> Result<(InstabilityTrace, InstabilityTrace)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut raw = InstabilityTrace { values: vec![], times: vec![] };
    let mut out = raw.clone();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| crate::CoreError::Format(format!("bad trace row {rec:?}")))
        };
        let t = num(1)?;
        raw.times.push(t);
        out.times.push(t);
        raw.values.push(num(2)?);
        out.values.push(num(3)?);
    }
    Ok((raw, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_oracles() {
        let spec = MetricSpec::default();
        let ones = vec![1.0f32; 64 * 64];
        let expect = 4096.0 * 1e6f64.ln();
        assert!((kl_metric(&ones, &spec) - expect).abs() / expect < 1e-9);
        assert!((expect - 56_588.7).abs() / expect < 1e-5);
        assert_eq!(kl_metric(&vec![0.0; 4096], &spec), 0.0);
        assert_eq!(kl_metric(&[1e-7, 1e-6], &spec), 0.0);
    }

    #[test]
    fn sample_metric_is_frame_mean() {
        let spec = MetricSpec::default();
        let frame_a = vec![0.0f32; 4];
        let frame_b = vec![0.5f32; 4];
        let mb = kl_metric(&frame_b, &spec);
        let s = VolumetricSample { voxels: [frame_a, frame_b].concat(), depth: 2, height: 2, width: 2, index: 0 };
        assert!((sample_metric(&s, &spec) - mb / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mean_filter_window_enumeration() {
        let mut f = vec![0.0f32; 144];
        f[6 * 12 + 6] = 1.0;
        let out = mean_filter(&f, 12, 12, 6);
        let hits: Vec<usize> = (0..144).filter(|&i| out[i] != 0.0).collect();
        assert_eq!(hits.len(), 36);
        assert!(hits.iter().all(|&i| (out[i] - 1.0 / 36.0).abs() < 1e-7));
        // anchor 2: rows and columns 3..=8 see the centre
        assert!(hits.iter().all(|&i| (3..=8).contains(&(i / 12)) && (3..=8).contains(&(i % 12))));
        assert_eq!(mean_filter(&f, 12, 12, 1), f);
        let c = vec![0.3f32; 30];
        assert!(mean_filter(&c, 5, 6, 4).iter().all(|v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn step_trace_gives_transition_only() {
        let v: Vec<f64> = (0..100).map(|i| if i < 60 { 0.0 } else { 100.0 }).collect();
        let e = find_events(&v, 1000.0, &EventSpec::default()).unwrap();
        assert_eq!(e.transition, Some(60));
        assert!(e.peaks.is_empty());
        let flat = vec![3.0; 100];
        let e = find_events(&flat, 1000.0, &EventSpec::default()).unwrap();
        assert_eq!((e.peaks.len(), e.transition), (0, None));
    }

    #[test]
    fn short_runs_are_peaks() {
        let mut v = vec![1.0; 200];
        v[40] = 50.0;
        v[41] = 60.0;
        v[90] = 55.0;
        for x in &mut v[150..] {
            *x = 70.0;
        }
        v[180] = 1.0;
        let e = find_events(&v, 1000.0, &EventSpec::default()).unwrap();
        assert_eq!(e.peaks, vec![41, 90]);
        assert_eq!(e.transition, Some(150));
    }

    #[test]
    fn identity_trace_matches_direct_metric() {
        let frames: Vec<f32> = (0..40 * 16).map(|i| (i % 7) as f32 / 7.0).collect();
        let seq = FrameSequence::new(frames, 40, 4, 4, 10.0).unwrap();
        let sampling = SamplingSpec::new(8, 8).unwrap();
        let spec = MetricSpec { filter_size: 1, ..MetricSpec::default() };
        let t = trace(&Identity, &seq, &sampling, &spec).unwrap();
        assert_eq!(t.len(), 5);
        let samples = make_volumes(&seq, &sampling).unwrap();
        for (v, s) in t.values.iter().zip(&samples) {
            assert_eq!(*v, sample_metric(s, &spec));
        }
        assert_eq!(t.times[0], 0.35);
        assert!(t.times.windows(2).all(|w| w[1] > w[0]));
    }
}
