//! File formats only the command line writes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Detected events plus the sampling needed to map samples back to frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventsFile {
    pub fps: f64,
    pub frames_per_sample: usize,
    pub stride: usize,
    pub sample_count: usize,
    pub threshold: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub peaks: Vec<usize>,
    pub peak_times: Vec<f64>,
    pub transition: Option<usize>,
    pub transition_time: Option<f64>,
}

/// 8-bit binary PGM of a frame in [0, 1].
pub fn write_gray_pgm(path: &Path, frame: &[f32], height: usize, width: usize) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(frame.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Every `.fvid` file below `dir`, in path order.
pub fn find_videos(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("configuration error: corpus directory {} does not exist", dir.display());
    }
    let mut found = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else if path.extension().is_some_and(|e| e == "fvid") {
                found.push(path);
            }
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("configuration error: no .fvid files under {}", dir.display());
    }
    Ok(found)
}
