//! The feature-extractor process boundary.
//!
//! Any extractor is invoked as
//! `<cmd> --manifest <path> --segments <path> --backbone <name> --out <path>`
//! and must write `<out>` plus `<out>.index.json`. Crop paths in the segment
//! index are resolved against the index file's directory.
//!
//! The bundled `protorbf-color-extractor` implements the same contract with
//! hand-crafted color statistics so the pipeline runs without a CNN.

use std::path::{Path, PathBuf};
use std::process::Command;

use ndarray::Array2;
use protorbf_core::segmentation::{rgb_to_lab, CROP_SIZE};
use protorbf_core::store::{write_embeddings, SegmentIndex};
use protorbf_core::{EmbeddingStore, Image};

use crate::error::{CliError, Result};

pub const COLOR_BACKBONE: &str = "color-stats";
pub const COLOR_TAG: &str = "color-stats-v1";
pub const COLOR_EXTRACTOR_BIN: &str = "protorbf-color-extractor";
const HIST_BINS: usize = 4;

/// Lab mean, Lab std, then a per-channel RGB histogram.
pub const COLOR_DIM: usize = 6 + 3 * HIST_BINS;

/// How to launch an extractor.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExtractorCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub backbone: String,
}

impl ExtractorCommand {
    /// Parses a whitespace-separated command line such as
    /// `python -m protorbf_extractor`.
    pub fn parse(cmd: &str, backbone: Option<String>) -> Result<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| CliError::Usage("--extractor-cmd is empty".into()))?;
        Ok(Self {
            program: program.into(),
            args: parts.collect(),
            backbone: backbone.unwrap_or_else(|| "resnet50".into()),
        })
    }

    /// The color extractor installed next to the running executable.
    pub fn bundled(backbone: Option<String>) -> Result<Self> {
        let exe = std::env::current_exe().map_err(CliError::io("current executable"))?;
        let dir = exe.parent().map(Path::to_path_buf).unwrap_or_default();
        // test binaries live one level below the bin directory
        let candidates = [dir.join(COLOR_EXTRACTOR_BIN), dir.join("..").join(COLOR_EXTRACTOR_BIN)];
        let program = candidates
            .iter()
            .find(|p| p.exists())
            .cloned()
            .unwrap_or_else(|| PathBuf::from(COLOR_EXTRACTOR_BIN));
        Ok(Self {
            program,
            args: Vec::new(),
            backbone: backbone.unwrap_or_else(|| COLOR_BACKBONE.into()),
        })
    }

    pub fn run(&self, manifest: &Path, segments: &Path, out: &Path) -> Result<()> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg("--manifest")
            .arg(manifest)
            .arg("--segments")
            .arg(segments)
            .arg("--backbone")
            .arg(&self.backbone)
            .arg("--out")
            .arg(out)
            .output()
            .map_err(CliError::io(&self.program))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(CliError::Data(format!(
                "extractor {} failed ({}): {}",
                self.program.display(),
                output.status,
                stderr.trim()
            )));
        }
        Ok(())
    }
}

/// Checks that `store` holds exactly one row per indexed segment.
pub fn validate_output(store: &EmbeddingStore, segments: &SegmentIndex) -> Result<()> {
    if store.dim() == 0 {
        return Err(CliError::Data("extractor produced zero-width embeddings".into()));
    }
    if store.rows() != segments.len() {
        return Err(CliError::Data(format!(
            "extractor wrote {} rows for {} segments",
            store.rows(),
            segments.len()
        )));
    }
    if let Some(r) = segments.records().iter().find(|r| store.row_of(&r.key()).is_none()) {
        return Err(CliError::Data(format!("extractor output has no row for segment {}", r.key())));
    }
    Ok(())
}

/// Color statistics of one crop.
pub fn color_features(img: &Image) -> Vec<f32> {
    let n = (img.width() * img.height()).max(1) as f64;
    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    let mut hist = [[0usize; HIST_BINS]; 3];
    for p in img.as_slice().chunks_exact(3) {
        let lab = rgb_to_lab([p[0] as f64, p[1] as f64, p[2] as f64]);
        for c in 0..3 {
            sum[c] += lab[c];
            sum_sq[c] += lab[c] * lab[c];
            let bin = ((p[c] as f64 * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            hist[c][bin] += 1;
        }
    }
    let mut out = Vec::with_capacity(COLOR_DIM);
    // scaled so every block is of order one
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    out.extend(mean.iter().map(|m| (m / 100.0) as f32));
    out.extend((0..3).map(|c| ((sum_sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt() / 100.0) as f32));
    out.extend(hist.iter().flatten().map(|&h| (h as f64 / n) as f32));
    out
}

/// Body of the bundled extractor binary.
pub fn run_color_extractor(segments_path: &Path, backbone: &str, out: &Path) -> Result<EmbeddingStore> {
    if backbone != COLOR_BACKBONE {
        return Err(CliError::Usage(format!(
            "unrecognized backbone {backbone:?}; this extractor only provides {COLOR_BACKBONE:?}"
        )));
    }
    let segments = SegmentIndex::read(segments_path)?;
    if segments.is_empty() {
        return Err(CliError::Data(format!("{}: no segments to embed", segments_path.display())));
    }
    let base = segments_path.parent().unwrap_or(Path::new("."));
    let mut matrix = Array2::<f32>::zeros((segments.len(), COLOR_DIM));
    let mut keys = Vec::with_capacity(segments.len());
    for (i, rec) in segments.records().iter().enumerate() {
        let path = base.join(&rec.crop_path);
        if !path.exists() {
            return Err(CliError::Data(format!("missing crop file {}", path.display())));
        }
        let img = Image::open(&path)?;
        if img.width() != CROP_SIZE || img.height() != CROP_SIZE {
            return Err(CliError::Data(format!(
                "{}: crop is {}x{}, expected {CROP_SIZE}x{CROP_SIZE}",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        for (dst, v) in matrix.row_mut(i).iter_mut().zip(color_features(&img)) {
            *dst = v;
        }
        keys.push(rec.key());
    }
    let store = EmbeddingStore::new(matrix, keys, COLOR_TAG)?;
    write_embeddings(&store, out)?;
    Ok(store)
}
