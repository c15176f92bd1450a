//! The 3D selective autoencoder and its per-frame 2D baseline.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use flamesentinel_nn::checkpoint::{read_checkpoint, write_checkpoint};
use flamesentinel_nn::layers::{BatchNorm, Conv, Dropout, MaxPool, Relu, Sigmoid, Upsample};
use flamesentinel_nn::{Layer, Sequential, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataio::VolumetricSample;
use crate::detection::Reconstructor;
use crate::error::{domain, CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Csae3d,
    Csae2d,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Csae3d => "3d",
            Variant::Csae2d => "2d",
        })
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3d" | "csae3d" => Ok(Variant::Csae3d),
            "2d" | "csae2d" => Ok(Variant::Csae2d),
            _ => Err(domain(format!("unknown model variant {s:?}; expected 3d or 2d"))),
        }
    }
}

/// Reference channel widths at scale 1: encoder then decoder.
const ENCODER: [usize; 3] = [32, 64, 96];
const DECODER: [usize; 3] = [64, 32, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub variant: Variant,
    pub width_scale: f64,
    /// Sample extents [depth, height, width]. The 2D variant processes each
    /// of the `depth` frames on its own.
    pub input: [usize; 3],
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { variant: Variant::Csae3d, width_scale: 1.0, input: [16, 64, 64], dropout: 0.25, seed: 0 }
    }
}

impl ModelSpec {
    pub fn channels(&self, base: usize) -> usize {
        ((base as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(domain("width_scale must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(domain("dropout rate must lie in [0, 1)"));
        }
        let [d, h, w] = self.input;
        if d == 0 {
            return Err(domain("sample depth must be positive"));
        }
        let pooled: &[usize] = match self.variant {
            Variant::Csae3d => &[d, h, w],
            Variant::Csae2d => &[h, w],
        };
        if pooled.iter().any(|&e| e == 0 || e % 4 != 0) {
            return Err(domain(format!(
                "{} input extents {:?} must be positive multiples of 4",
                self.variant, self.input
            )));
        }
        Ok(())
    }
}

/// Architecture choices that do not depend on the data geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub width_scale: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = ModelSpec::default();
        Self { variant: d.variant, width_scale: d.width_scale, dropout: d.dropout, seed: d.seed }
    }
}

impl ModelConfig {
    pub fn spec(&self, input: [usize; 3]) -> ModelSpec {
        ModelSpec { variant: self.variant, width_scale: self.width_scale, input, dropout: self.dropout, seed: self.seed }
    }
}

#[derive(Clone, Debug)]
pub struct CsaeModel {
    pub spec: ModelSpec,
    pub net: Sequential<f32>,
}

pub fn build_csae3d(width_scale: f64) -> Result<CsaeModel> {
    CsaeModel::build(ModelSpec { width_scale, ..ModelSpec::default() })
}

pub fn build_csae2d(width_scale: f64) -> Result<CsaeModel> {
    CsaeModel::build(ModelSpec { variant: Variant::Csae2d, width_scale, ..ModelSpec::default() })
}

struct Builder<'a> {
    net: Sequential<f32>,
    rng: ChaCha8Rng,
    kernel: [usize; 3],
    spec: &'a ModelSpec,
    convs: usize,
}

impl Builder<'_> {
    fn conv(&mut self, stage: &str, cin: usize, cout: usize, bn_relu: bool) {
        self.net.push(format!("{stage}.conv"), Layer::Conv(Conv::glorot(self.kernel, cin, cout, &mut self.rng)));
        if bn_relu {
            self.net.push(format!("{stage}.bn"), Layer::BatchNorm(BatchNorm::new(cout)));
            self.net.push(format!("{stage}.relu"), Layer::Relu(Relu::default()));
        }
        self.convs += 1;
    }

    fn dropout(&mut self, name: &str) {
        let seed = self.spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.convs as u64);
        self.net.push(name, Layer::Dropout(Dropout::new(self.spec.dropout, seed)));
    }
}

impl CsaeModel {
    pub fn build(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let three_d = spec.variant == Variant::Csae3d;
        let (kernel, pool) = if three_d { ([3, 3, 3], [2, 2, 2]) } else { ([1, 3, 3], [1, 2, 2]) };
        let [e1, e2, e3] = ENCODER.map(|c| spec.channels(c));
        let [d1, d2, d3] = DECODER.map(|c| spec.channels(c));
        let mut b = Builder {
            net: Sequential::new(),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            kernel,
            spec: &spec,
            convs: 0,
        };
        if three_d {
            b.conv("enc1", 1, e1, true);
            b.conv("enc2", e1, e2, true);
            b.net.push("pool1", Layer::MaxPool(MaxPool::new(pool)));
            b.dropout("drop1");
            b.conv("enc3", e2, e3, true);
            b.net.push("pool2", Layer::MaxPool(MaxPool::new(pool)));
            b.dropout("drop2");
        } else {
            b.conv("enc1", 1, e1, true);
            b.net.push("pool1", Layer::MaxPool(MaxPool::new(pool)));
            b.conv("enc2", e1, e2, true);
            b.net.push("pool2", Layer::MaxPool(MaxPool::new(pool)));
            b.conv("enc3", e2, e3, true);
        }
        b.conv("dec1", e3, d1, true);
        b.net.push("up1", Layer::Upsample(Upsample::new(pool)));
        b.conv("dec2", d1, d2, true);
        b.net.push("up2", Layer::Upsample(Upsample::new(pool)));
        b.conv("dec3", d2, d3, true);
        b.conv("out", d3, 1, false);
        b.net.push("out.sigmoid", Layer::Sigmoid(Sigmoid::default()));
        Ok(Self { net: b.net, spec })
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Conv layers in the encoder and in the decoder.
    pub fn conv_layer_counts(&self) -> (usize, usize) {
        let convs: Vec<&str> = self
            .net
            .layers()
            .filter(|(_, l)| matches!(l, Layer::Conv(_)))
            .map(|(n, _)| n)
            .collect();
        let enc = convs.iter().filter(|n| n.starts_with("enc")).count();
        (enc, convs.len() - enc)
    }

    /// Network tensor shape for a batch of `n` samples.
    pub fn batch_shape(&self, n: usize) -> Vec<usize> {
        let [d, h, w] = self.spec.input;
        match self.spec.variant {
            Variant::Csae3d => vec![n, d, h, w, 1],
            Variant::Csae2d => vec![n * d, 1, h, w, 1],
        }
    }

    /// Packs samples into one network input.
    pub fn pack(&self, samples: &[&VolumetricSample]) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(samples.len() * self.spec.input.iter().product::<usize>());
        for s in samples {
            if s.shape() != self.spec.input {
                return Err(domain(format!(
                    "model expects samples of {:?}, got {:?}",
                    self.spec.input,
                    s.shape()
                )));
            }
            data.extend_from_slice(&s.voxels);
        }
        Ok(Tensor::new(self.batch_shape(samples.len()), data)?)
    }

    /// Inference-mode forward pass on a packed batch.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.net.infer(x)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_with(dir, Value::Null, &[])
    }

    /// Writes the network plus caller-owned tensors and metadata.
    pub fn save_with(&self, dir: &Path, extra_meta: Value, extra: &[(String, &Tensor<f32>)]) -> Result<()> {
        let mut tensors = self.net.state();
        tensors.extend(extra.iter().map(|(n, t)| (n.clone(), *t)));
        let meta = json!({
            "model": self.spec,
            "param_count": self.param_count(),
            "extra": extra_meta,
        });
        write_checkpoint(dir, &tensors, meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self::load_with(dir)?.model)
    }

    pub fn load_with(dir: &Path) -> Result<LoadedCheckpoint> {
        let (manifest, tensors) = read_checkpoint(dir)?;
        let spec: ModelSpec = serde_json::from_value(
            manifest
                .meta
                .get("model")
                .cloned()
                .ok_or_else(|| CoreError::Format("checkpoint metadata lacks a model section".into()))?,
        )?;
        let mut model = Self::build(spec)?;
        let own: Vec<String> = model.net.state().into_iter().map(|(n, _)| n).collect();
        let mut net_state = HashMap::new();
        let mut extra = Vec::new();
        for (name, t) in tensors {
            if own.contains(&name) {
                net_state.insert(name, t);
            } else {
                extra.push((name, t));
            }
        }
        model.net.load_state(net_state)?;
        let meta = manifest.meta.get("extra").cloned().unwrap_or(Value::Null);
        Ok(LoadedCheckpoint { model, meta, extra })
    }
}

pub struct LoadedCheckpoint {
    pub model: CsaeModel,
    pub meta: Value,
    pub extra: Vec<(String, Tensor<f32>)>,
}

impl Reconstructor for CsaeModel {
    fn sample_shape(&self) -> Option<[usize; 3]> {
        Some(self.spec.input)
    }

    fn reconstruct(&self, batch: &[VolumetricSample]) -> Result<Vec<Vec<f32>>> {
        let refs: Vec<&VolumetricSample> = batch.iter().collect();
        let out = self.predict(&self.pack(&refs)?)?;
        let per = self.spec.input.iter().product::<usize>();
        Ok(out.data().chunks(per).map(<[f32]>::to_vec).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Weights and biases of a same-padded conv with `taps` kernel taps.
    fn conv_params(taps: usize, cin: usize, cout: usize) -> usize {
        cout * (cin * taps + 1)
    }

    fn analytic(taps: usize, s: f64) -> usize {
        let c = |b: usize| ((b as f64 * s).round() as usize).max(1);
        let chain = [1, c(32), c(64), c(96), c(64), c(32), c(16), 1];
        let convs: usize = chain.windows(2).map(|w| conv_params(taps, w[0], w[1])).sum();
        let bn: usize = chain[1..7].iter().map(|ch| 2 * ch).sum();
        convs + bn
    }

    #[test]
    fn reference_parameter_count() {
        assert_eq!(conv_params(27, 32, 64), 55_360);
        assert_eq!(analytic(27, 1.0), 458_401);
        let m = build_csae3d(1.0).unwrap();
        assert_eq!(m.param_count(), 458_401);
        let bn: usize = m
            .net
            .params()
            .iter()
            .filter(|(n, _)| n.contains(".bn."))
            .map(|(_, p)| p.value.len())
            .sum();
        assert_eq!(bn, 608);
        let rel = (458_401.0 - 510_000.0f64).abs() / 510_000.0;
        assert!(rel < 0.15);
    }

    #[test]
    fn scaled_counts_match_analytic() {
        for s in [0.125, 0.25, 0.5] {
            assert_eq!(build_csae3d(s).unwrap().param_count(), analytic(27, s));
            assert_eq!(build_csae2d(s).unwrap().param_count(), analytic(9, s));
            assert!(analytic(9, s) < analytic(27, s));
        }
        assert!(build_csae3d(0.125).unwrap().param_count() < 10_000);
    }

    #[test]
    fn layer_counts() {
        assert_eq!(build_csae2d(0.125).unwrap().conv_layer_counts(), (3, 4));
        assert_eq!(build_csae3d(0.125).unwrap().conv_layer_counts(), (3, 4));
    }

    #[test]
    fn output_shape_and_range() {
        for variant in [Variant::Csae3d, Variant::Csae2d] {
            let spec = ModelSpec { variant, width_scale: 0.125, input: [4, 8, 8], ..ModelSpec::default() };
            let m = CsaeModel::build(spec).unwrap();
            let x = Tensor::from_fn(&m.batch_shape(2), |i| ((i * 37) % 11) as f32 / 10.0);
            let y = m.predict(&x).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
            let z = m.predict(&Tensor::zeros(&m.batch_shape(1))).unwrap();
            assert!(z.all_finite());
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let spec = ModelSpec { input: [6, 8, 8], ..ModelSpec::default() };
        assert!(CsaeModel::build(spec.clone()).is_err());
        // depth is not pooled by the 2D variant
        assert!(CsaeModel::build(ModelSpec { variant: Variant::Csae2d, ..spec }).is_ok());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_csae3d(0.125).unwrap();
        let b = build_csae3d(0.125).unwrap();
        let c = CsaeModel::build(ModelSpec { width_scale: 0.125, seed: 1, ..ModelSpec::default() }).unwrap();
        let vals = |m: &CsaeModel| m.net.params().iter().flat_map(|(_, p)| p.value.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(vals(&a), vals(&b));
        assert_ne!(vals(&a), vals(&c));
    }
}
