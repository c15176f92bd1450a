//! Labeled synthetic flame videos and pressure traces.
//!
//! A frame is a static Gaussian flame body plus spatially and temporally
//! correlated turbulence. In the stable regime the body wanders randomly
//! (scattered modulation). In the unstable regime it is displaced
//! sinusoidally at `f0` and carries a bright lobe that rides the same
//! oscillation with optional intensity modulation (ordered modulation).
//! Pressure shares the oscillation phase, so pressure peaks pick out frames
//! at a common displacement.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataio::{write_fvid, FrameSequence};
use crate::error::{domain, CoreError, Result};
use crate::physval::{blur, gaussian_kernel, PressureSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Stable,
    Unstable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub regime: Regime,
}

/// Static flame body: anisotropic Gaussian, geometry in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseFlame {
    /// (row, col) of the anchor.
    pub anchor: (f64, f64),
    /// (row, col) standard deviations.
    pub scale: (f64, f64),
    pub intensity: f64,
    /// Profile exponent p in exp(−q^p/2); 1 is Gaussian, larger is flatter
    /// with a sharper rim.
    pub sharpness: f64,
    /// Camera black level: rendered values at or below it read as 0.
    pub black_level: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turbulence {
    /// Standard deviation of the multiplicative intensity field.
    pub amplitude: f64,
    /// Gaussian smoothing length of the field, pixels.
    pub correlation_length: f64,
    /// e-folding time of the field, frames.
    pub correlation_frames: f64,
    /// Standard deviation of the stable-regime flame displacement, pixels.
    pub wander: f64,
    /// e-folding time of the wander, frames.
    pub wander_frames: f64,
    /// Standard deviation of a global brightness gain around 1.
    pub flicker: f64,
    /// e-folding time of the flicker, frames.
    pub flicker_frames: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coherent {
    pub frequency_hz: f64,
    /// Horizontal displacement amplitude, pixels.
    pub displacement: f64,
    /// Lobe brightness swing in [0, 1]; 0 keeps the lobe at constant intensity.
    pub modulation_depth: f64,
    pub lobe_intensity: f64,
    /// (row, col) of the lobe relative to the flame anchor, pixels.
    pub lobe_offset: (f64, f64),
    pub lobe_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureModel {
    /// Sinusoid amplitude in unstable segments.
    pub amplitude: f64,
    pub noise_std: f64,
    /// AR(1) coefficient of the band-limited noise.
    pub noise_correlation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub duration: f64,
    pub fps: f64,
    /// (height, width)
    pub frame_size: (usize, usize),
    pub base_flame: BaseFlame,
    pub turbulence: Turbulence,
    pub coherent: Coherent,
    pub pressure: PressureModel,
    pub schedule: Vec<Segment>,
    /// Stable frames render the unstable pattern at an independent random
    /// phase per frame, so only the temporal ordering separates the regimes.
    #[serde(default)]
    pub temporal_only: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub transition_time: Option<f64>,
    pub burst_times: Vec<f64>,
    pub regime_per_frame: Vec<Regime>,
}

impl GroundTruth {
    /// Index of the sample containing frame `round(time·fps)`.
    pub fn sample_of(time: f64, fps: f64, stride: usize) -> usize {
        (time * fps).round() as usize / stride
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Two isolated precursor bursts, then a sustained transition.
    TransitionWithPrecursors,
    /// Four precursor bursts, then a sustained transition.
    SuddenTransition,
    /// Stable throughout.
    NoTransition,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [
        Protocol::TransitionWithPrecursors,
        Protocol::SuddenTransition,
        Protocol::NoTransition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::TransitionWithPrecursors => "transition_with_precursors",
            Protocol::SuddenTransition => "sudden_transition",
            Protocol::NoTransition => "no_transition",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Protocol::ALL.iter().map(|p| p.name()).collect();
                domain(format!("unknown protocol {s:?}; expected one of {known:?}"))
            })
    }
}

/// Burst length in seconds (one 16-frame sample at the default 500 fps).
pub const BURST_DURATION: f64 = 0.032;

impl ScenarioSpec {
    /// Desk-scale defaults: 500 fps, 6 s, 64×64 frames, one regime throughout.
    pub fn quasi_static(regime: Regime, seed: u64) -> Self {
        let duration = 6.0;
        Self {
            name: format!("quasi_static_{}", if regime == Regime::Stable { "stable" } else { "unstable" }),
            duration,
            fps: 500.0,
            frame_size: (64, 64),
            base_flame: BaseFlame {
                anchor: (38.0, 32.0),
                scale: (11.0, 7.0),
                intensity: 0.6,
                sharpness: 3.0,
                black_level: 0.03,
            },
            turbulence: Turbulence {
                amplitude: 0.15,
                correlation_length: 4.0,
                correlation_frames: 3.0,
                wander: 4.0,
                wander_frames: 1.0,
                flicker: 0.1,
                flicker_frames: 40.0,
            },
            coherent: Coherent {
                frequency_hz: 50.0,
                displacement: 4.0,
                modulation_depth: 0.5,
                lobe_intensity: 0.45,
                lobe_offset: (-14.0, 0.0),
                lobe_scale: 4.0,
            },
            pressure: PressureModel {
                amplitude: 1.0,
                noise_std: 0.05,
                noise_correlation: 0.6,
            },
            schedule: vec![Segment { start: 0.0, end: duration, regime }],
            temporal_only: false,
            seed,
        }
    }

    /// Quasi-static corpus where only temporal ordering tells the regimes
    /// apart: stable frames reuse the unstable rendering at random phases and
    /// the lobe brightness does not depend on phase.
    pub fn temporal_only(regime: Regime, seed: u64) -> Self {
        let mut spec = Self::quasi_static(regime, seed);
        spec.name = format!("temporal_only_{}", if regime == Regime::Stable { "stable" } else { "unstable" });
        spec.temporal_only = true;
        spec.coherent.modulation_depth = 0.0;
        spec
    }

    /// Spec for a canned test protocol at 500 fps over 6 s.
    pub fn protocol(protocol: Protocol, seed: u64) -> Self {
        let mut spec = Self::quasi_static(Regime::Stable, seed);
        spec.name = protocol.name().to_string();
        let d = spec.duration;
        let transition = 2.0 * d / 3.0;
        let bursts: &[f64] = match protocol {
            // 0.96 s and 2.368 s at the default duration
            Protocol::TransitionWithPrecursors => &[0.16, 0.394_666_666_666_666_7],
            Protocol::SuddenTransition => &[0.15, 0.2666, 0.4166, 0.5333],
            Protocol::NoTransition => &[],
        };
        let bursts: Vec<f64> = bursts.iter().map(|f| f * d).collect();
        let end_of_stable = if protocol == Protocol::NoTransition { None } else { Some(transition) };
        spec.schedule = build_schedule(d, &bursts, BURST_DURATION, end_of_stable);
        spec
    }

    /// Rescales timing; schedule boundaries scale with the duration.
    pub fn with_timing(mut self, fps: f64, duration: f64) -> Self {
        let k = duration / self.duration;
        for s in &mut self.schedule {
            s.start *= k;
            s.end *= k;
        }
        if let Some(last) = self.schedule.last_mut() {
            last.end = duration;
        }
        self.duration = duration;
        self.fps = fps;
        self
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.duration > 0.0) {
            return Err(domain("fps and duration must be positive"));
        }
        if self.frame_count() == 0 || self.frame_size.0 == 0 || self.frame_size.1 == 0 {
            return Err(domain("scenario produces no pixels"));
        }
        if !(self.coherent.frequency_hz > 0.0 && self.coherent.frequency_hz < self.fps / 2.0) {
            return Err(domain(format!(
                "oscillation frequency {} Hz must lie in (0, fps/2 = {})",
                self.coherent.frequency_hz,
                self.fps / 2.0
            )));
        }
        if !(self.base_flame.sharpness > 0.0) {
            return Err(domain("flame sharpness must be positive"));
        }
        if !(0.0..1.0).contains(&self.base_flame.black_level) {
            return Err(domain("black level must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.coherent.modulation_depth) {
            return Err(domain("modulation depth must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.pressure.noise_correlation) {
            return Err(domain("pressure noise correlation must lie in [0, 1)"));
        }
        let t = &self.turbulence;
        if [t.amplitude, t.wander, t.wander_frames, t.correlation_length, t.correlation_frames, t.flicker, t.flicker_frames]
            .iter()
            .any(|&v| !(v >= 0.0))
        {
            return Err(domain("turbulence parameters must be non-negative"));
        }
        let tol = 1e-9;
        let first = self.schedule.first().ok_or_else(|| domain("empty schedule"))?;
        if first.start.abs() > tol {
            return Err(domain("schedule must start at 0"));
        }
        for w in self.schedule.windows(2) {
            if (w[0].end - w[1].start).abs() > tol {
                return Err(domain(format!(
                    "schedule gap or overlap between {:?} and {:?}",
                    w[0], w[1]
                )));
            }
        }
        if self.schedule.iter().any(|s| !(s.end > s.start)) {
            return Err(domain("schedule segments must have positive length"));
        }
        let last = self.schedule.last().expect("non-empty");
        if (last.end - self.duration).abs() > tol {
            return Err(domain("schedule must end at the scenario duration"));
        }
        Ok(())
    }

    pub fn regime_per_frame(&self) -> Vec<Regime> {
        let bounds: Vec<(usize, Regime)> = self
            .schedule
            .iter()
            .map(|s| ((s.start * self.fps).round() as usize, s.regime))
            .collect();
        (0..self.frame_count())
            .map(|i| {
                bounds
                    .iter()
                    .rev()
                    .find(|(start, _)| *start <= i)
                    .map_or(bounds[0].1, |(_, r)| *r)
            })
            .collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let last = self.schedule.last().expect("validated schedule");
        let transition_time = (last.regime == Regime::Unstable).then_some(last.start);
        let burst_times = self
            .schedule
            .iter()
            .filter(|s| s.regime == Regime::Unstable && Some(s.start) != transition_time)
            .map(|s| s.start)
            .collect();
        GroundTruth {
            transition_time,
            burst_times,
            regime_per_frame: self.regime_per_frame(),
        }
    }
}

fn build_schedule(duration: f64, bursts: &[f64], burst_len: f64, transition: Option<f64>) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut t = 0.0;
    for &b in bursts {
        out.push(Segment { start: t, end: b, regime: Regime::Stable });
        out.push(Segment { start: b, end: b + burst_len, regime: Regime::Unstable });
        t = b + burst_len;
    }
    match transition {
        Some(tr) => {
            out.push(Segment { start: t, end: tr, regime: Regime::Stable });
            out.push(Segment { start: tr, end: duration, regime: Regime::Unstable });
        }
        None => out.push(Segment { start: t, end: duration, regime: Regime::Stable }),
    }
    out
}

/// Returns the canned spec for a protocol name.
pub fn make_protocol(name: &str, seed: u64) -> Result<ScenarioSpec> {
    Ok(ScenarioSpec::protocol(name.parse()?, seed))
}

/// Single-regime corpus scenarios accepted by [`scenario_by_name`].
pub const CORPUS_SCENARIOS: [&str; 4] = ["stable", "unstable", "temporal_only_stable", "temporal_only_unstable"];

/// A protocol or one of the [`CORPUS_SCENARIOS`].
pub fn scenario_by_name(name: &str, seed: u64) -> Result<ScenarioSpec> {
    match name {
        "stable" => Ok(ScenarioSpec::quasi_static(Regime::Stable, seed)),
        "unstable" => Ok(ScenarioSpec::quasi_static(Regime::Unstable, seed)),
        "temporal_only_stable" => Ok(ScenarioSpec::temporal_only(Regime::Stable, seed)),
        "temporal_only_unstable" => Ok(ScenarioSpec::temporal_only(Regime::Unstable, seed)),
        _ => make_protocol(name, seed).map_err(|_| {
            let mut known: Vec<&str> = Protocol::ALL.iter().map(|p| p.name()).collect();
            known.extend(CORPUS_SCENARIOS);
            domain(format!("unknown scenario {name:?}; expected one of {known:?}"))
        }),
    }
}

fn ar_coefficient(correlation_frames: f64) -> f64 {
    if correlation_frames <= 0.0 {
        0.0
    } else {
        (-1.0 / correlation_frames).exp()
    }
}

/// Spatially smoothed white noise rescaled to unit variance.
struct FieldGen {
    kernel: Vec<f64>,
    norm: f64,
    h: usize,
    w: usize,
}

impl FieldGen {
    fn new(sigma: f64, h: usize, w: usize) -> Self {
        let kernel = gaussian_kernel(sigma);
        let norm = 1.0 / kernel.iter().map(|v| v * v).sum::<f64>();
        Self { kernel, norm, h, w }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let white: Vec<f64> = (0..self.h * self.w).map(|_| rng.sample(StandardNormal)).collect();
        let mut f = blur(&white, self.h, self.w, &self.kernel);
        f.iter_mut().for_each(|v| *v *= self.norm);
        f
    }
}

fn flame_lobe(frame: &mut [f64], w: usize, center: (f64, f64), scale: (f64, f64), amp: f64, p: f64) {
    if amp == 0.0 {
        return;
    }
    for (idx, v) in frame.iter_mut().enumerate() {
        let (r, c) = ((idx / w) as f64, (idx % w) as f64);
        let dr = (r - center.0) / scale.0;
        let dc = (c - center.1) / scale.1;
        *v += amp * (-0.5 * (dr * dr + dc * dc).powf(p)).exp();
    }
}

impl ScenarioSpec {
    /// Flame body plus lobe for the unstable pattern at oscillation phase `phase`.
    fn render_coherent(&self, frame: &mut [f64], w: usize, phase: f64) {
        let b = &self.base_flame;
        let c = &self.coherent;
        let dx = c.displacement * phase.sin();
        flame_lobe(frame, w, (b.anchor.0, b.anchor.1 + dx), b.scale, b.intensity, b.sharpness);
        let m = c.modulation_depth;
        let lobe_amp = c.lobe_intensity * (1.0 - m * (1.0 - phase.sin()) / 2.0);
        let center = (b.anchor.0 + c.lobe_offset.0, b.anchor.1 + c.lobe_offset.1 + dx);
        flame_lobe(frame, w, center, (c.lobe_scale, c.lobe_scale), lobe_amp, b.sharpness);
    }

    pub fn phase_at(&self, frame: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.coherent.frequency_hz * frame as f64 / self.fps
    }

    /// Oscillation phase of every frame. Temporal-only scenarios add a random
    /// offset and a small random walk so that the phase seen by any single
    /// frame is not tied to the fps/frequency grid.
    pub fn phase_track(&self) -> Vec<f64> {
        let n = self.regime_per_frame().len();
        if !self.temporal_only {
            return (0..n).map(|i| self.phase_at(i)).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(3);
        let mut drift: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        (0..n)
            .map(|i| {
                if i > 0 {
                    drift += PHASE_JITTER * rng.sample::<f64, _>(StandardNormal);
                }
                self.phase_at(i) + drift
            })
            .collect()
    }
}

/// Per-frame phase random-walk step (radians) in temporal-only scenarios.
const PHASE_JITTER: f64 = 0.15;

/// Renders the scenario. Deterministic in `spec.seed`.
pub fn generate_video(spec: &ScenarioSpec) -> Result<(FrameSequence, GroundTruth)> {
    spec.validate()?;
    let (h, w) = spec.frame_size;
    let truth = spec.ground_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let t = &spec.turbulence;
    let rho = ar_coefficient(t.correlation_frames);
    let innov = (1.0 - rho * rho).sqrt();
    let fields = FieldGen::new(t.correlation_length, h, w);
    let mut field = if t.amplitude > 0.0 { fields.sample(&mut rng) } else { vec![0.0; h * w] };
    let mut wander: (f64, f64) = (
        t.wander * rng.sample::<f64, _>(StandardNormal),
        t.wander * rng.sample::<f64, _>(StandardNormal),
    );
    let rho_w = ar_coefficient(t.wander_frames);
    let innov_w = (1.0 - rho_w * rho_w).sqrt();
    let rho_g = ar_coefficient(t.flicker_frames);
    let innov_g = (1.0 - rho_g * rho_g).sqrt();
    let mut gain: f64 = rng.sample(StandardNormal);
    let black = spec.base_flame.black_level;
    let phases = spec.phase_track();

    let mut frames = Vec::with_capacity(truth.regime_per_frame.len() * h * w);
    for (i, &regime) in truth.regime_per_frame.iter().enumerate() {
        if i > 0 {
            if t.amplitude > 0.0 {
                let fresh = fields.sample(&mut rng);
                field.iter_mut().zip(&fresh).for_each(|(f, n)| *f = rho * *f + innov * n);
            }
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            wander = (rho_w * wander.0 + innov_w * t.wander * a, rho_w * wander.1 + innov_w * t.wander * b);
            gain = rho_g * gain + innov_g * rng.sample::<f64, _>(StandardNormal);
        }
        let g = 1.0 + t.flicker * gain;
        // drawn every frame so the stream does not depend on the regime
        let scrambled: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut img = vec![0.0; h * w];
        match (regime, spec.temporal_only) {
            (Regime::Unstable, _) => spec.render_coherent(&mut img, w, phases[i]),
            (Regime::Stable, true) => spec.render_coherent(&mut img, w, scrambled),
            (Regime::Stable, false) => {
                let b = &spec.base_flame;
                let center = (b.anchor.0 + wander.0, b.anchor.1 + wander.1);
                flame_lobe(&mut img, w, center, b.scale, b.intensity, b.sharpness);
            }
        }
        frames.extend(img.iter().zip(&field).map(|(v, f)| {
            let lit = g * v * (1.0 + t.amplitude * f);
            ((lit - black) / (1.0 - black)).clamp(0.0, 1.0) as f32
        }));
    }
    let mut meta = Map::new();
    meta.insert("scenario".into(), Value::from(spec.name.clone()));
    meta.insert("seed".into(), Value::from(spec.seed));
    meta.insert("transition_time".into(), serde_json::to_value(truth.transition_time)?);
    meta.insert("burst_times".into(), serde_json::to_value(&truth.burst_times)?);
    let seq = FrameSequence::new(frames, truth.regime_per_frame.len(), h, w, spec.fps as f32)?.with_meta(meta);
    Ok((seq, truth))
}

/// One pressure value per frame: band-limited noise everywhere, plus a
/// sinusoid in phase with the flame oscillation during unstable frames.
pub fn generate_pressure(spec: &ScenarioSpec) -> Result<PressureSeries> {
    spec.validate()?;
    let regimes = spec.regime_per_frame();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);
    let p = &spec.pressure;
    let rho = p.noise_correlation;
    let innov = (1.0 - rho * rho).sqrt();
    let mut noise: f64 = rng.sample(StandardNormal);
    let phases = spec.phase_track();
    let values = regimes
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if i > 0 {
                noise = rho * noise + innov * rng.sample::<f64, _>(StandardNormal);
            }
            let signal = match r {
                Regime::Unstable => p.amplitude * phases[i].sin(),
                Regime::Stable => 0.0,
            };
            signal + p.noise_std * noise
        })
        .collect();
    PressureSeries::new(values, spec.fps)
}

#[derive(Serialize)]
struct SidecarRef<'a> {
    scenario: &'a ScenarioSpec,
    ground_truth: &'a GroundTruth,
}

#[derive(Deserialize)]
pub struct Sidecar {
    pub scenario: ScenarioSpec,
    pub ground_truth: GroundTruth,
}

pub fn write_sidecar(path: &Path, spec: &ScenarioSpec, truth: &GroundTruth) -> Result<()> {
    let body = serde_json::to_vec_pretty(&SidecarRef { scenario: spec, ground_truth: truth })?;
    fs::write(path, body)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// File names written by [`write_scenario`].
pub const VIDEO_FILE: &str = "video.fvid";
pub const PRESSURE_FILE: &str = "pressure.csv";
pub const TRUTH_FILE: &str = "ground_truth.json";

/// Writes the video, pressure CSV and ground-truth sidecar into `dir`.
pub fn write_scenario(dir: &Path, spec: &ScenarioSpec) -> Result<GroundTruth> {
    fs::create_dir_all(dir)?;
    let (seq, truth) = generate_video(spec)?;
    write_fvid(&seq, &dir.join(VIDEO_FILE))?;
    generate_pressure(spec)?.write_csv(&dir.join(PRESSURE_FILE))?;
    write_sidecar(&dir.join(TRUTH_FILE), spec, &truth)?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(regime: Regime) -> ScenarioSpec {
        ScenarioSpec::quasi_static(regime, 7).with_timing(500.0, 0.2)
    }

    #[test]
    fn calm_stable_frames_equal_the_flame_body() {
        let mut spec = small(Regime::Stable);
        spec.turbulence.amplitude = 0.0;
        spec.turbulence.wander = 0.0;
        spec.turbulence.flicker = 0.0;
        spec.base_flame.black_level = 0.0;
        let (seq, _) = generate_video(&spec).unwrap();
        let first = seq.frame(0).to_vec();
        assert!(seq.frames().all(|f| f == first.as_slice()));
        let (h, w) = spec.frame_size;
        let mut body = vec![0.0; h * w];
        let b = &spec.base_flame;
        flame_lobe(&mut body, w, b.anchor, b.scale, b.intensity, b.sharpness);
        assert!(first.iter().zip(&body).all(|(a, b)| (*a as f64 - b).abs() < 1e-6));
    }

    #[test]
    fn lobe_centroid_period_is_fps_over_f0() {
        let mut spec = ScenarioSpec::quasi_static(Regime::Unstable, 3).with_timing(3000.0, 0.1);
        spec.coherent.frequency_hz = 120.0;
        spec.turbulence.amplitude = 0.0;
        spec.turbulence.flicker = 0.0;
        let (seq, _) = generate_video(&spec).unwrap();
        let w = seq.width();
        let centroid: Vec<f64> = seq
            .frames()
            .map(|f| {
                let m: f64 = f.iter().map(|&v| v as f64).sum();
                f.iter().enumerate().map(|(i, &v)| (i % w) as f64 * v as f64).sum::<f64>() / m
            })
            .collect();
        // smallest lag at which the centroid track repeats
        let period = (2..100)
            .find(|&lag| (0..centroid.len() - lag).all(|i| (centroid[i] - centroid[i + lag]).abs() < 1e-4))
            .unwrap();
        assert_eq!(period, 25);
    }

    #[test]
    fn regime_flips_at_schedule_boundary() {
        let mut spec = ScenarioSpec::quasi_static(Regime::Stable, 1).with_timing(500.0, 4.0);
        spec.frame_size = (8, 8);
        spec.schedule = vec![
            Segment { start: 0.0, end: 2.0, regime: Regime::Stable },
            Segment { start: 2.0, end: 4.0, regime: Regime::Unstable },
        ];
        let (_, truth) = generate_video(&spec).unwrap();
        assert_eq!(truth.regime_per_frame[999], Regime::Stable);
        assert_eq!(truth.regime_per_frame[1000], Regime::Unstable);
        assert_eq!(truth.transition_time, Some(2.0));
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let mut spec = small(Regime::Stable);
        spec.schedule = vec![
            Segment { start: 0.0, end: 0.1, regime: Regime::Stable },
            Segment { start: 0.12, end: 0.2, regime: Regime::Unstable },
        ];
        assert!(matches!(generate_video(&spec), Err(CoreError::InputDomain(_))));
        let mut spec = small(Regime::Stable);
        spec.coherent.frequency_hz = 250.0;
        assert!(generate_video(&spec).is_err());
    }

    #[test]
    fn pressure_amplitudes() {
        let spec = ScenarioSpec::quasi_static(Regime::Stable, 5);
        let p = generate_pressure(&spec).unwrap();
        let max = p.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 5.0 * spec.pressure.noise_std, "max |p| = {max}");

        let spec = ScenarioSpec::quasi_static(Regime::Unstable, 5);
        let pmax = generate_pressure(&spec).unwrap().p_max();
        assert!((0.9..=1.2).contains(&pmax), "P_max = {pmax}");
    }

    fn frame_moments(seq: &FrameSequence) -> (f64, f64) {
        let (mut mean, mut var) = (0.0, 0.0);
        for f in seq.frames() {
            let m = f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64;
            mean += m;
            var += f.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / f.len() as f64;
        }
        (mean / seq.len() as f64, var / seq.len() as f64)
    }

    #[test]
    fn temporal_only_marginals_match() {
        let stable = ScenarioSpec::temporal_only(Regime::Stable, 21).with_timing(500.0, 2.0);
        let unstable = ScenarioSpec::temporal_only(Regime::Unstable, 21).with_timing(500.0, 2.0);
        let (ms, vs) = frame_moments(&generate_video(&stable).unwrap().0);
        let (mu, vu) = frame_moments(&generate_video(&unstable).unwrap().0);
        assert!((ms - mu).abs() / mu < 0.05, "means {ms} {mu}");
        assert!((vs - vu).abs() / vu < 0.05, "variances {vs} {vu}");
    }

    #[test]
    fn temporal_only_phase_is_off_the_frame_grid() {
        let spec = ScenarioSpec::temporal_only(Regime::Unstable, 5).with_timing(500.0, 2.0);
        let track = spec.phase_track();
        let step = spec.phase_at(1);
        // on the grid, phase mod step would be one value for every frame
        let mut bins = [false; 20];
        for p in &track {
            bins[((p.rem_euclid(step) / step) * 20.0) as usize % 20] = true;
        }
        assert!(bins.iter().all(|&b| b));
        // consecutive frames still advance by about one nominal step
        let mean = track.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (track.len() - 1) as f64;
        assert!((mean - step).abs() < 0.05 * step);
        assert_eq!(track, spec.phase_track());
        let plain = ScenarioSpec::quasi_static(Regime::Unstable, 5).with_timing(500.0, 2.0);
        assert_eq!(plain.phase_track()[7], plain.phase_at(7));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec::protocol(Protocol::TransitionWithPrecursors, 11).with_timing(500.0, 0.5);
        let (a, _) = generate_video(&spec).unwrap();
        let (b, _) = generate_video(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_pressure(&spec).unwrap(), generate_pressure(&spec).unwrap());
    }

    #[test]
    fn protocol_ground_truth() {
        let t = ScenarioSpec::protocol(Protocol::TransitionWithPrecursors, 0).ground_truth();
        assert_eq!(t.burst_times.len(), 2);
        assert!((t.transition_time.unwrap() - 4.0).abs() < 1e-9);
        assert!(t.burst_times.iter().all(|&b| b < 4.0));
        assert!((t.burst_times[0] - 0.96).abs() < 1e-9);
        assert_eq!(t.regime_per_frame.len(), 3000);

        let t = ScenarioSpec::protocol(Protocol::NoTransition, 0).ground_truth();
        assert_eq!(t.transition_time, None);
        assert!(t.burst_times.is_empty());

        let t = make_protocol("sudden_transition", 0).unwrap().ground_truth();
        assert!(t.burst_times.len() >= 4);
        assert!(make_protocol("bogus", 0).is_err());
        assert!(scenario_by_name("bogus", 0).is_err());
        let t = scenario_by_name("unstable", 0).unwrap().ground_truth();
        assert_eq!(t.transition_time, Some(0.0));
        assert!(t.burst_times.is_empty());
    }
}
