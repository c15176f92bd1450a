use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use flamesentinel_core::config::RunConfig;
use flamesentinel_core::dataio::{make_volumes, read_fvid};
use flamesentinel_core::detection::{find_events, read_trace_csv, trace, write_trace_csv, Identity, Reconstructor};
use flamesentinel_core::models::{CsaeModel, Variant};
use flamesentinel_core::physval::{
    ensemble_edges, normalized_conditioned_pressure, thinness, window_instants, write_conditioned_csv, PressureSeries,
};
use flamesentinel_core::stats::{separation_report, write_density_csv};
use flamesentinel_core::synthgen::{read_sidecar, scenario_by_name, write_scenario, GroundTruth, Regime};
use flamesentinel_core::training::{label_all, train as train_model, write_history_csv, LabeledVolume};
use flamesentinel_nn::Tensor;
use serde::Serialize;
use serde_json::json;

use crate::output::{find_videos, read_json, write_gray_pgm, write_json, EventsFile};

const DENSITY_POINTS: usize = 512;

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

pub fn synth(name: &str, out: &Path, seed: u64, fps: Option<f64>, duration: Option<f64>) -> Result<()> {
    let mut spec = scenario_by_name(name, seed)?;
    if fps.is_some() || duration.is_some() {
        let (f, d) = (fps.unwrap_or(spec.fps), duration.unwrap_or(spec.duration));
        spec = spec.with_timing(f, d);
    }
    let truth = write_scenario(out, &spec).with_context(|| format!("writing scenario to {}", out.display()))?;
    println!(
        "{}: {} frames of {}x{} at {} fps",
        spec.name,
        truth.regime_per_frame.len(),
        spec.frame_size.0,
        spec.frame_size.1,
        spec.fps
    );
    println!("bursts at {:?} s; transition at {:?} s", truth.burst_times, truth.transition_time);
    Ok(())
}

#[derive(Serialize)]
struct CorpusEntry {
    path: String,
    label: Regime,
    samples: usize,
}

fn load_corpus(dir: &Path, label: Regime, cfg: &RunConfig, volumes: &mut Vec<LabeledVolume>) -> Result<Vec<CorpusEntry>> {
    let mut entries = Vec::new();
    for path in find_videos(dir)? {
        let seq = read_fvid(&path)?.preprocess(&cfg.dataio)?;
        let samples = make_volumes(&seq, &cfg.sampling)?;
        entries.push(CorpusEntry { path: path.display().to_string(), label, samples: samples.len() });
        volumes.extend(label_all(samples, label));
    }
    Ok(entries)
}

pub fn train(
    config: Option<&Path>,
    stable: &Path,
    unstable: &Path,
    out: &Path,
    variant: Option<Variant>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(v) = variant {
        cfg.model.variant = v;
    }
    if let Some(e) = epochs {
        cfg.training.epochs = e;
    }
    cfg.validate()?;
    let mut corpus = Vec::new();
    let mut files = load_corpus(stable, Regime::Stable, &cfg, &mut corpus)?;
    files.extend(load_corpus(unstable, Regime::Unstable, &cfg, &mut corpus)?);

    let mut model = CsaeModel::build(cfg.model_spec())?;
    let (enc, dec) = model.conv_layer_counts();
    println!("variant {}: {} trainable parameters", cfg.model.variant, model.param_count());
    println!("encoder conv layers: {enc}, decoder conv layers: {dec}");
    println!("corpus: {} volumes from {} videos", corpus.len(), files.len());

    let outcome = train_model(&mut model, &corpus, &cfg.training)?;
    let names: Vec<String> = model.net.params().into_iter().map(|(n, _)| n).collect();
    let moments: Vec<(String, &Tensor<f32>)> = names
        .iter()
        .zip(&outcome.optimizer.m)
        .map(|(n, t)| (format!("adam.m.{n}"), t))
        .chain(names.iter().zip(&outcome.optimizer.v).map(|(n, t)| (format!("adam.v.{n}"), t)))
        .collect();
    let meta = json!({
        "run_config": cfg,
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        // moments belong to the last epoch, weights to the best one
        "adam_step": outcome.optimizer.step,
    });
    model.save_with(out, meta, &moments)?;
    write_history_csv(&out.join("history.csv"), &outcome.history)?;
    write_json(
        &out.join("training.json"),
        &json!({
            "corpus": files,
            "config": cfg,
            "seeds": {
                "model": cfg.model.seed,
                "training": cfg.training.seed,
            },
            "train_indices": outcome.train_indices,
            "val_indices": outcome.val_indices,
        }),
    )?;
    let last = outcome.history.last().expect("history has the initial row");
    println!(
        "final train loss {:.6}, validation loss {:.6}; best validation loss {:.6} at epoch {}",
        last.train_loss, last.val_loss, outcome.best_val_loss, outcome.best_epoch
    );
    Ok(())
}

pub fn detect(model_dir: &Path, video: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let loaded = CsaeModel::load_with(model_dir).with_context(|| format!("loading checkpoint {}", model_dir.display()))?;
    let cfg = match config {
        Some(_) => load_config(config)?,
        None => match loaded.meta.get("run_config") {
            Some(v) => serde_json::from_value(v.clone()).context("checkpoint run_config")?,
            None => RunConfig::default(),
        },
    };
    let model = loaded.model;
    let seq = read_fvid(video)?.preprocess(&cfg.dataio)?;
    let raw = trace(&Identity, &seq, &cfg.sampling, &cfg.metric)?;
    let rec = trace(&model, &seq, &cfg.sampling, &cfg.metric)?;
    let max_metric = cfg.metric.max_frame_metric(seq.frame_len());
    let events = find_events(&rec.values, max_metric, &cfg.events)?;

    fs::create_dir_all(out)?;
    write_trace_csv(&out.join("trace.csv"), &raw, &rec, &events)?;
    let file = EventsFile {
        fps: seq.fps() as f64,
        frames_per_sample: cfg.sampling.frames_per_sample,
        stride: cfg.sampling.stride,
        sample_count: rec.len(),
        threshold: events.threshold,
        baseline_mean: events.baseline_mean,
        baseline_std: events.baseline_std,
        peak_times: events.peaks.iter().map(|&p| rec.times[p]).collect(),
        peaks: events.peaks.clone(),
        transition: events.transition,
        transition_time: events.transition.map(|t| rec.times[t]),
    };
    write_json(&out.join("events.json"), &file)?;

    let samples = make_volumes(&seq, &cfg.sampling)?;
    let peak = events.peaks.first().copied().unwrap_or_else(|| {
        (0..rec.len()).reduce(|a, b| if rec.values[b] > rec.values[a] { b } else { a }).unwrap_or(0)
    });
    let snaps = fs::create_dir_all(out.join("snapshots")).map(|_| out.join("snapshots"))?;
    for (role, j) in [("first", 0), ("peak", peak), ("last", samples.len() - 1)] {
        let s = &samples[j];
        let recon = model.reconstruct(std::slice::from_ref(s))?.remove(0);
        let plane = s.height * s.width;
        for k in [1usize, 8, 16] {
            let f = (k - 1).min(s.depth - 1);
            let name = format!("{role}_s{j}_f{k}");
            write_gray_pgm(&snaps.join(format!("{name}_input.pgm")), s.frame(f), s.height, s.width)?;
            write_gray_pgm(&snaps.join(format!("{name}_output.pgm")), &recon[f * plane..(f + 1) * plane], s.height, s.width)?;
        }
    }
    println!("{} samples; peaks {:?}; transition {:?}", rec.len(), file.peaks, file.transition);
    Ok(())
}

#[derive(Serialize)]
struct ThinnessEntry {
    sample: usize,
    role: &'static str,
    first_frame: usize,
    members: usize,
    local_conditioning: bool,
    thinness: Option<f64>,
}

pub fn validate(video: &Path, pressure: &Path, events: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let seq = read_fvid(video)?;
    let p = PressureSeries::read_csv(pressure)?;
    if p.len() != seq.len() {
        bail!("pressure has {} samples but the video has {} frames", p.len(), seq.len());
    }
    let ev: EventsFile = read_json(events)?;
    fs::create_dir_all(out)?;
    let fraction = cfg.physval.fraction;
    write_conditioned_csv(&out.join("conditioned_pressure.csv"), &normalized_conditioned_pressure(&p, fraction), p.fps())?;

    let mut windows: Vec<(usize, &'static str)> = Vec::new();
    for &pk in &ev.peaks {
        if pk > 0 {
            windows.push((pk - 1, "before_peak"));
        }
        windows.push((pk, "peak"));
        if pk + 1 < ev.sample_count {
            windows.push((pk + 1, "after_peak"));
        }
    }
    if let Some(t) = ev.transition {
        windows.push((t, "transition"));
    }
    let mut entries = Vec::new();
    for (j, role) in windows {
        let start = j * ev.stride;
        let range = start..start + ev.frames_per_sample;
        if range.end > seq.len() {
            bail!("events refer to sample {j}, beyond the {}-frame video", seq.len());
        }
        let (instants, local) = window_instants(&p, range.clone(), fraction);
        let ens = ensemble_edges(&seq, &instants, range, &cfg.physval.canny)?;
        let (members, value) = match &ens {
            Some(e) => {
                e.union.write_pgm(&out.join(format!("edges_s{j}.pgm")))?;
                let t = if e.count() >= cfg.physval.min_members { thinness(e).ok() } else { None };
                (e.count(), t)
            }
            None => (0, None),
        };
        println!("sample {j} ({role}): {members} conditioned frames, thinness {value:?}");
        entries.push(ThinnessEntry { sample: j, role, first_frame: start, members, local_conditioning: local, thinness: value });
    }
    write_json(&out.join("thinness.json"), &entries)?;
    Ok(())
}

pub fn report(run: &Path, truth: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let (raw, rec) = read_trace_csv(&run.join("trace.csv"))?;
    let ev: EventsFile = read_json(&run.join("events.json"))?;
    let split = match truth {
        Some(t) => {
            let sidecar = read_sidecar(t)?;
            let time = sidecar
                .ground_truth
                .transition_time
                .ok_or_else(|| anyhow::anyhow!("ground truth has no transition to split at"))?;
            GroundTruth::sample_of(time, ev.fps, ev.stride)
        }
        None => ev.transition.ok_or_else(|| anyhow::anyhow!("no transition detected; pass --truth to choose the split"))?,
    };
    let sep = separation_report(&raw.values, &rec.values, split, &cfg.stats)?;
    write_density_csv(&run.join("density_raw.csv"), &sep.raw.0, &sep.raw.1, DENSITY_POINTS)?;
    write_density_csv(&run.join("density_output.csv"), &sep.output.0, &sep.output.1, DENSITY_POINTS)?;
    write_json(&run.join("separation.json"), &sep.report)?;
    let r = &sep.report;
    println!(
        "raw overlap {:.4} (AUC {:.4}); output overlap {:.4} (AUC {:.4}); reduction {:.2}x",
        r.raw.overlap, r.raw.auc, r.output.overlap, r.output.auc, r.reduction_factor
    );
    Ok(())
}
