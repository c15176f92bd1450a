//! Selective training: stable volumes learn to vanish, unstable volumes learn
//! to reappear in binarized form.

use std::path::Path;

use flamesentinel_nn::{mse_loss, AdamConfig, AdamState, Mode, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::VolumetricSample;
use crate::error::{domain, CoreError, Result};
use crate::models::CsaeModel;
use crate::synthgen::Regime;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Share of each class used for training; the rest validates.
    pub split_fraction: f64,
    /// Voxels above this are "on" in unstable targets.
    pub tau_bin: f32,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            adam: AdamConfig::default(),
            split_fraction: 0.8,
            tau_bin: 1.0 / 255.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Full-length schedule.
    pub const PARITY_EPOCHS: usize = 200;

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(CoreError::Config("split_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.tau_bin) {
            return Err(CoreError::Config("tau_bin must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(CoreError::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVolume {
    pub sample: VolumetricSample,
    pub label: Regime,
}

pub fn label_all(samples: Vec<VolumetricSample>, label: Regime) -> Vec<LabeledVolume> {
    samples.into_iter().map(|sample| LabeledVolume { sample, label }).collect()
}

/// All zeros for stable volumes; `voxel > tau_bin` for unstable ones.
pub fn make_target(v: &LabeledVolume, tau_bin: f32) -> VolumetricSample {
    let voxels = match v.label {
        Regime::Stable => vec![0.0; v.sample.voxels.len()],
        Regime::Unstable => v.sample.voxels.iter().map(|&x| if x > tau_bin { 1.0 } else { 0.0 }).collect(),
    };
    VolumetricSample { voxels, ..v.sample.clone() }
}

/// Stratified split into (train, validation) index lists. The training size
/// is `round(n·fraction)`, shared between classes by largest remainder.
pub fn split_corpus(corpus: &[LabeledVolume], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if corpus.is_empty() {
        return Err(domain("cannot split an empty corpus"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(domain("split fraction must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<Vec<usize>> = [Regime::Stable, Regime::Unstable]
        .iter()
        .map(|&r| (0..corpus.len()).filter(|&i| corpus[i].label == r).collect())
        .collect();
    for c in &mut classes {
        c.shuffle(&mut rng);
    }
    let total = (corpus.len() as f64 * fraction).round() as usize;
    let ideal: Vec<f64> = classes.iter().map(|c| c.len() as f64 * fraction).collect();
    let mut take: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| (ideal[b] - ideal[b].floor()).total_cmp(&(ideal[a] - ideal[a].floor())));
    let mut left = total.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(classes.len() * 2) {
        if left == 0 {
            break;
        }
        if take[c] < classes[c].len() {
            take[c] += 1;
            left -= 1;
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (c, t) in classes.iter().zip(take) {
        train.extend_from_slice(&c[..t]);
        val.extend_from_slice(&c[t..]);
    }
    Ok((train, val))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    /// Row 0 holds the untrained model's losses.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub optimizer: AdamState<f32>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn batch_tensors(model: &CsaeModel, corpus: &[LabeledVolume], idx: &[usize], tau: f32) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let inputs: Vec<&VolumetricSample> = idx.iter().map(|&i| &corpus[i].sample).collect();
    let targets: Vec<VolumetricSample> = idx.iter().map(|&i| make_target(&corpus[i], tau)).collect();
    let target_refs: Vec<&VolumetricSample> = targets.iter().collect();
    Ok((model.pack(&inputs)?, model.pack(&target_refs)?))
}

/// Inference-mode MSE averaged over samples.
pub fn evaluate_loss(model: &CsaeModel, corpus: &[LabeledVolume], idx: &[usize], cfg: &TrainingConfig) -> Result<f64> {
    if idx.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in idx.chunks(cfg.batch_size) {
        let (x, t) = batch_tensors(model, corpus, chunk, cfg.tau_bin)?;
        let (loss, _) = mse_loss(&model.predict(&x)?, &t)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Trains in place and leaves the model at its best validation epoch.
pub fn train(model: &mut CsaeModel, corpus: &[LabeledVolume], cfg: &TrainingConfig) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let stable = corpus.iter().filter(|v| v.label == Regime::Stable).count();
    if stable == 0 || stable == corpus.len() {
        return Err(CoreError::Config(
            "training corpus must contain both stable and unstable volumes".into(),
        ));
    }
    let (train_idx, val_idx) = split_corpus(corpus, cfg.split_fraction, cfg.seed)?;
    let mut optimizer = AdamState::new(cfg.adam);
    let initial_val = evaluate_loss(model, corpus, &val_idx, cfg)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: evaluate_loss(model, corpus, &train_idx, cfg)?,
        val_loss: initial_val,
    }];
    let mut best = (0, initial_val, model.net.clone());
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, t) = batch_tensors(model, corpus, chunk, cfg.tau_bin)?;
            model.net.zero_grad();
            let y = model.net.forward(&x, Mode::Train { step })?;
            let (loss, grad) = mse_loss(&y, &t)?;
            model.net.backward_params(&grad)?;
            let mut params: Vec<_> = model.net.params_mut().into_iter().map(|(_, p)| p).collect();
            optimizer.update(&mut params);
            sum += loss * chunk.len() as f64;
            step += 1;
        }
        model.net.clear_cache();
        let train_loss = sum / order.len() as f64;
        let val_loss = evaluate_loss(model, corpus, &val_idx, cfg)?;
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        history.push(EpochRecord { epoch, train_loss, val_loss });
        // without a validation set every epoch counts as an improvement
        if !(val_loss >= best.1) {
            best = (epoch, val_loss, model.net.clone());
        }
    }
    let (best_epoch, best_val_loss, net) = best;
    model.net = net;
    Ok(TrainingOutcome {
        history,
        best_epoch,
        best_val_loss,
        optimizer,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
