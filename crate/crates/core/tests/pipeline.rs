use std::fs;

use flamesentinel_core::dataio::{make_volumes, Preprocess, SamplingSpec};
use flamesentinel_core::detection::{trace, Identity, MetricSpec, Reconstructor};
use flamesentinel_core::models::{CsaeModel, ModelSpec};
use flamesentinel_core::synthgen::{generate_video, Regime, ScenarioSpec};
use flamesentinel_core::training::{label_all, train, LabeledVolume, TrainingConfig};
use flamesentinel_nn::checkpoint::MANIFEST_FILE;

const SIDE: usize = 16;

fn corpus(regime: Regime, seed: u64, take: usize) -> Vec<LabeledVolume> {
    let spec = ScenarioSpec::quasi_static(regime, seed).with_timing(500.0, 1.2);
    let (seq, _) = generate_video(&spec).unwrap();
    let small = seq.preprocess(&Preprocess { out_size: (SIDE, SIDE), ..Preprocess::default() }).unwrap();
    let mut v = label_all(make_volumes(&small, &SamplingSpec::default()).unwrap(), regime);
    v.truncate(take);
    v
}

fn tiny_spec() -> ModelSpec {
    ModelSpec { width_scale: 0.125, input: [16, SIDE, SIDE], seed: 5, ..ModelSpec::default() }
}

#[test]
fn tiny_model_learns_to_mask_stable_and_keep_unstable() {
    let mut data = corpus(Regime::Stable, 1, 32);
    data.extend(corpus(Regime::Unstable, 2, 32));
    let mut model = CsaeModel::build(tiny_spec()).unwrap();
    let cfg = TrainingConfig { epochs: 30, ..TrainingConfig::default() };
    let out = train(&mut model, &data, &cfg).unwrap();
    let initial = out.history[0].val_loss;
    assert!(out.best_val_loss < 0.5 * initial, "{} vs {initial}", out.best_val_loss);

    let stable = corpus(Regime::Stable, 11, 8);
    let unstable = corpus(Regime::Unstable, 12, 8);
    let s_lit = lit_output_mean(&model, &stable, cfg.tau_bin);
    let u_lit = lit_output_mean(&model, &unstable, cfg.tau_bin);
    assert!(s_lit < 0.05, "stable lit-voxel output mean {s_lit}");
    assert!(u_lit > 0.3, "unstable lit-voxel output mean {u_lit}");
    assert!(u_lit > 10.0 * s_lit, "unstable {u_lit} vs stable {s_lit}");
}

// mean output over voxels where the input flame is lit
fn lit_output_mean(model: &CsaeModel, v: &[LabeledVolume], tau: f32) -> f64 {
    let samples: Vec<_> = v.iter().map(|l| l.sample.clone()).collect();
    let out = model.reconstruct(&samples).unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for (s, o) in samples.iter().zip(&out) {
        for (&x, &y) in s.voxels.iter().zip(o) {
            if x > tau {
                sum += y as f64;
                n += 1;
            }
        }
    }
    sum / n as f64
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let model = CsaeModel::build(tiny_spec()).unwrap();
    model.save(dir.path()).unwrap();
    let back = CsaeModel::load(dir.path()).unwrap();
    let samples: Vec<_> = corpus(Regime::Unstable, 3, 3).into_iter().map(|l| l.sample).collect();
    assert_eq!(model.reconstruct(&samples).unwrap(), back.reconstruct(&samples).unwrap());
}

#[test]
fn checkpoint_missing_a_tensor_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    CsaeModel::build(tiny_spec()).unwrap().save(dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    manifest["tensors"].as_array_mut().unwrap().retain(|t| t["name"] != "enc2.conv.weight");
    fs::write(&path, manifest.to_string()).unwrap();
    assert!(CsaeModel::load(dir.path()).is_err());
}

#[test]
fn identity_trace_covers_every_sample() {
    let spec = ScenarioSpec::quasi_static(Regime::Unstable, 4).with_timing(500.0, 0.5);
    let (seq, _) = generate_video(&spec).unwrap();
    let small = seq.preprocess(&Preprocess { out_size: (SIDE, SIDE), ..Preprocess::default() }).unwrap();
    let sampling = SamplingSpec::default();
    let t = trace(&Identity, &small, &sampling, &MetricSpec::default()).unwrap();
    assert_eq!(t.len(), sampling.sample_count(small.len()));
    assert!(t.values.iter().all(|v| v.is_finite() && *v > 0.0));
    assert!(t.times.windows(2).all(|w| w[1] > w[0]));
}
