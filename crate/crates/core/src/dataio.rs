//! Frame sequences, the FVID container, frame preprocessing and volumetric
//! sampling.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{domain, CoreError, Result};

/// Ordered grayscale frames `T×H×W` with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<f32>,
    len: usize,
    height: usize,
    width: usize,
    fps: f32,
    pub meta: Map<String, Value>,
}

impl FrameSequence {
    pub fn new(frames: Vec<f32>, len: usize, height: usize, width: usize, fps: f32) -> Result<Self> {
        if len == 0 || height == 0 || width == 0 {
            return Err(domain(format!("empty frame sequence {len}x{height}x{width}")));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(domain(format!("fps must be positive, got {fps}")));
        }
        if frames.len() != len * height * width {
            return Err(domain(format!(
                "{} intensities do not fill {len}x{height}x{width}",
                frames.len()
            )));
        }
        if let Some(v) = frames.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(domain(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            frames,
            len,
            height,
            width,
            fps,
            meta: Map::new(),
        })
    }

    pub fn with_meta(mut self, meta: Map<String, Value>) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.frames
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.frames.chunks(self.frame_len())
    }

    /// Applies `preprocess_frame` to every frame.
    pub fn preprocess(&self, pre: &Preprocess) -> Result<FrameSequence> {
        let (oh, ow) = pre.out_size;
        let mut out = Vec::with_capacity(self.len * oh * ow);
        for f in self.frames() {
            out.extend(preprocess_frame(f, self.height, self.width, pre)?);
        }
        Ok(FrameSequence::new(out, self.len, oh, ow, self.fps)?.with_meta(self.meta.clone()))
    }
}

/// Axis-aligned crop rectangle in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Roi {
    pub fn full(height: usize, width: usize) -> Self {
        Self { top: 0, left: 0, height, width }
    }
}

/// Frame preprocessing: crop, bilinear resize, then a global linear map of
/// `[raw_min, raw_max]` onto `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    /// `None` means the full frame.
    pub roi: Option<Roi>,
    pub out_size: (usize, usize),
    pub raw_min: f32,
    pub raw_max: f32,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            roi: None,
            out_size: (64, 64),
            raw_min: 0.0,
            raw_max: 1.0,
        }
    }
}

impl Preprocess {
    pub fn validate(&self) -> Result<()> {
        if self.out_size.0 == 0 || self.out_size.1 == 0 {
            return Err(domain(format!("output size must be positive, got {:?}", self.out_size)));
        }
        if !(self.raw_max > self.raw_min) {
            return Err(domain(format!(
                "raw range [{}, {}] is empty",
                self.raw_min, self.raw_max
            )));
        }
        Ok(())
    }
}

pub fn preprocess_frame(frame: &[f32], height: usize, width: usize, pre: &Preprocess) -> Result<Vec<f32>> {
    pre.validate()?;
    if frame.len() != height * width {
        return Err(domain(format!(
            "frame has {} pixels, expected {height}x{width}",
            frame.len()
        )));
    }
    let roi = pre.roi.unwrap_or(Roi::full(height, width));
    if roi.height == 0 || roi.width == 0 || roi.top + roi.height > height || roi.left + roi.width > width {
        return Err(domain(format!("roi {roi:?} lies outside the {height}x{width} frame")));
    }
    let (oh, ow) = pre.out_size;
    let at = |r: usize, c: usize| frame[(roi.top + r) * width + roi.left + c];
    let scale = 1.0 / (pre.raw_max - pre.raw_min);
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        let (r0, r1, fr) = bilinear_source(i, oh, roi.height);
        for j in 0..ow {
            let (c0, c1, fc) = bilinear_source(j, ow, roi.width);
            let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
            let bottom = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
            let v = top * (1.0 - fr) + bottom * fr;
            out.push(((v - pre.raw_min) * scale).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Half-pixel-centre source coordinate for output index `i`, as the two
/// neighbouring source indices and the weight of the second.
fn bilinear_source(i: usize, out: usize, src: usize) -> (usize, usize, f32) {
    if out == src {
        return (i, i, 0.0);
    }
    let x = ((i as f64 + 0.5) * src as f64 / out as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    (lo, hi, (x - lo as f64) as f32)
}

/// `N` frames per sample, `k` frames between sample starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSpec {
    pub frames_per_sample: usize,
    pub stride: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self { frames_per_sample: 16, stride: 16 }
    }
}

impl SamplingSpec {
    pub fn new(frames_per_sample: usize, stride: usize) -> Result<Self> {
        let s = Self { frames_per_sample, stride };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_sample == 0 || self.stride == 0 {
            return Err(domain(format!("sampling needs N >= 1 and k >= 1, got {self:?}")));
        }
        Ok(())
    }

    /// `floor((T − N)/k) + 1`, or zero when `T < N`.
    pub fn sample_count(&self, frames: usize) -> usize {
        if frames < self.frames_per_sample {
            0
        } else {
            (frames - self.frames_per_sample) / self.stride + 1
        }
    }

    pub fn first_frame(&self, index: usize) -> usize {
        index * self.stride
    }
}

/// `N` stacked frames `N×H×W`; `index` is the sample's position `j` (0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct VolumetricSample {
    pub voxels: Vec<f32>,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub index: usize,
}

impl VolumetricSample {
    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.voxels[i * n..(i + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.voxels.chunks(self.height * self.width)
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }
}

pub fn make_volumes(seq: &FrameSequence, spec: &SamplingSpec) -> Result<Vec<VolumetricSample>> {
    spec.validate()?;
    let n = spec.frames_per_sample;
    if seq.len() < n {
        return Err(domain(format!(
            "sequence has {} frames, fewer than N = {n}",
            seq.len()
        )));
    }
    let fl = seq.frame_len();
    Ok((0..spec.sample_count(seq.len()))
        .map(|j| {
            let start = spec.first_frame(j) * fl;
            VolumetricSample {
                voxels: seq.data()[start..start + n * fl].to_vec(),
                depth: n,
                height: seq.height(),
                width: seq.width(),
                index: j,
            }
        })
        .collect())
}

const MAGIC: &[u8; 4] = b"FVID";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 4 + 4;

/// Serializes to the FVID container (little-endian header, UTF-8 JSON
/// metadata, frame-major row-major `f32` payload).
pub fn encode_fvid(seq: &FrameSequence) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&seq.meta)?;
    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + seq.data().len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, seq.len() as u32, seq.height() as u32, seq.width() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&seq.fps().to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for v in seq.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fvid(bytes: &[u8]) -> Result<FrameSequence> {
    let fmt = |m: String| CoreError::Format(m);
    if bytes.len() < HEADER_LEN {
        return Err(fmt(format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(fmt(format!("unsupported FVID version {version}")));
    }
    let (t, h, w) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let fps = f32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes"));
    let m = u32_at(24) as usize;
    let meta_end = HEADER_LEN
        .checked_add(m)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fmt("truncated metadata".into()))?;
    let meta: Map<String, Value> = if m == 0 {
        Map::new()
    } else {
        serde_json::from_slice(&bytes[HEADER_LEN..meta_end]).map_err(|e| fmt(format!("metadata: {e}")))?
    };
    let count = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| fmt("frame extents overflow".into()))?;
    let payload = &bytes[meta_end..];
    if payload.len() < count * 4 {
        return Err(fmt(format!(
            "truncated payload: header declares {t} frames of {h}x{w} ({} bytes), found {} bytes",
            count * 4,
            payload.len()
        )));
    }
    if payload.len() > count * 4 {
        return Err(fmt(format!("{} trailing bytes after payload", payload.len() - count * 4)));
    }
    let frames: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(v) = frames.iter().find(|v| !v.is_finite()) {
        return Err(fmt(format!("non-finite intensity {v}")));
    }
    FrameSequence::new(frames, t, h, w, fps)
        .map(|s| s.with_meta(meta))
        .map_err(|e| fmt(e.to_string()))
}

pub fn write_fvid(seq: &FrameSequence, path: &Path) -> Result<()> {
    fs::write(path, encode_fvid(seq)?)?;
    Ok(())
}

pub fn read_fvid(path: &Path) -> Result<FrameSequence> {
    decode_fvid(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, h: usize, w: usize) -> FrameSequence {
        let n = t * h * w;
        FrameSequence::new((0..n).map(|i| i as f32 / n as f32).collect(), t, h, w, 500.0).unwrap()
    }

    #[test]
    fn rejects_invalid_sequences() {
        assert!(FrameSequence::new(vec![], 0, 1, 1, 1.0).is_err());
        assert!(FrameSequence::new(vec![0.5], 1, 1, 1, 0.0).is_err());
        assert!(FrameSequence::new(vec![1.5], 1, 1, 1, 1.0).is_err());
    }

    #[test]
    fn preprocess_downsizes_full_resolution_frame() {
        let (h, w) = (1024, 1024);
        let frame: Vec<f32> = (0..h * w).map(|i| ((i % w) as f32) / (w - 1) as f32).collect();
        let out = preprocess_frame(&frame, h, w, &Preprocess::default()).unwrap();
        assert_eq!(out.len(), 64 * 64);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        // horizontal ramp stays monotone in each row
        assert!(out[..64].windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn preprocess_identity_and_constant_cases() {
        let frame: Vec<f32> = (0..64 * 64).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        assert_eq!(preprocess_frame(&frame, 64, 64, &Preprocess::default()).unwrap(), frame);

        let pre = Preprocess { out_size: (2, 2), ..Preprocess::default() };
        assert_eq!(preprocess_frame(&[0.5; 16], 4, 4, &pre).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn preprocess_crops_and_rescales_globally() {
        let frame: Vec<f32> = (0..16).map(|i| i as f32 * 10.0).collect();
        let pre = Preprocess {
            roi: Some(Roi { top: 1, left: 1, height: 2, width: 2 }),
            out_size: (2, 2),
            raw_min: 0.0,
            raw_max: 255.0,
        };
        let out = preprocess_frame(&frame, 4, 4, &pre).unwrap();
        for (o, e) in out.iter().zip([50.0f32, 60.0, 90.0, 100.0]) {
            assert!((o - e / 255.0).abs() < 1e-6);
        }
        let bad = Preprocess { roi: Some(Roi { top: 3, left: 0, height: 2, width: 2 }), ..pre };
        assert!(matches!(preprocess_frame(&frame, 4, 4, &bad), Err(CoreError::InputDomain(_))));
    }

    #[test]
    fn volume_counts() {
        let spec = SamplingSpec::default();
        assert_eq!(spec.sample_count(18_000), 1125);
        let seq = ramp(16, 2, 2);
        let v = make_volumes(&seq, &spec).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].voxels, seq.data());
        let seq = ramp(100, 2, 2);
        let v = make_volumes(&seq, &spec).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v[5].frame(15), seq.frame(95));
        assert!(make_volumes(&ramp(15, 2, 2), &spec).is_err());
    }

    #[test]
    fn fvid_round_trip_and_corruption() {
        let mut seq = ramp(8, 16, 16);
        seq.meta.insert("scenario".into(), Value::from("unit"));
        let bytes = encode_fvid(&seq).unwrap();
        assert_eq!(decode_fvid(&bytes).unwrap(), seq);

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_fvid(&bad), Err(CoreError::Format(m)) if m.contains("magic")));

        // declare 8 frames but ship only 7
        let short = &bytes[..bytes.len() - 16 * 16 * 4];
        assert!(matches!(decode_fvid(short), Err(CoreError::Format(m)) if m.contains("truncated")));

        let mut nan = bytes.clone();
        let last = nan.len() - 4;
        nan[last..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_fvid(&nan), Err(CoreError::Format(m)) if m.contains("non-finite")));
    }
}
