//! Feature files, annotations, dataset manifests and train/test splits.

pub mod annotation;
pub mod avfs;
pub mod manifest;
pub mod splits;

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use avfs::{Tensor, TensorData};

pub use annotation::{downsample_mean, make_ground_truth, VideoAnnotation};
pub use manifest::{load_dataset, load_dataset_with_root, Dataset, Manifest, ManifestEntry, VideoRecord};
pub use splits::{make_splits, Organization, SplitPlan};

/// Model grid rate: one visual sample every 15 frames of ~30 fps video.
pub const GRID_HZ: f64 = 2.0;
pub const DEFAULT_STRIDE: usize = 15;
pub const DEFAULT_VISUAL_DIM: usize = 1024;
pub const DEFAULT_AUDIO_DIM: usize = 128;

/// Aligned per-timestep features of one video, one row per 2 Hz sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub visual: Matrix,
    pub audio: Matrix,
    /// Set when the audio block is all zeros (no audio track).
    pub silent: bool,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, visual: Matrix, audio: Matrix) -> Result<Self> {
        let video_id = video_id.into();
        if visual.rows() != audio.rows() {
            return Err(Error::data(
                video_id,
                format!(
                    "misaligned streams: {} visual rows, {} audio rows",
                    visual.rows(),
                    audio.rows()
                ),
            ));
        }
        if !visual.is_finite() || !audio.is_finite() {
            return Err(Error::data(video_id, "non-finite feature values"));
        }
        let silent = audio.data().iter().all(|&v| v == 0.0);
        Ok(FeatureSequence {
            video_id,
            visual,
            audio,
            silent,
        })
    }

    pub fn len(&self) -> usize {
        self.visual.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.visual.rows() == 0
    }

    /// AVFS records for this sequence (`visual`, `audio`, both `f32`).
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let block = |name: &str, m: &Matrix| Tensor {
            name: name.to_string(),
            dims: vec![m.rows() as u64, m.cols() as u64],
            data: TensorData::F32(m.data().iter().map(|&v| v as f32).collect()),
        };
        vec![block("visual", &self.visual), block("audio", &self.audio)]
    }
}

/// How two 2 Hz streams were reconciled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    /// Common length; sample `i` of one stream pairs with sample `i` of the other.
    pub len: usize,
    pub visual_dropped: usize,
    pub audio_dropped: usize,
}

impl Alignment {
    pub fn truncated(&self) -> usize {
        self.visual_dropped + self.audio_dropped
    }
}

/// Pairs visual sample `i` (every 15 frames) with audio window `i` (1 s
/// windows, 0.5 s hop): both run at 2 Hz, so the longer stream is cut to the
/// shorter.
pub fn align(visual_len: usize, audio_len: usize) -> Result<Alignment> {
    if visual_len == 0 || audio_len == 0 {
        return Err(Error::EmptySequence("align"));
    }
    let len = visual_len.min(audio_len);
    Ok(Alignment {
        len,
        visual_dropped: visual_len - len,
        audio_dropped: audio_len - len,
    })
}

fn f32_matrix(t: &Tensor, path: &Path) -> Result<Matrix> {
    let (rows, cols) = t
        .matrix_shape()
        .ok_or_else(|| Error::format(path, format!("tensor {} must be rank 2", t.name)))?;
    match &t.data {
        TensorData::F32(v) => Matrix::from_vec(rows, cols, v.iter().map(|&x| x as f64).collect()),
        _ => Err(Error::format(path, format!("tensor {} must be f32", t.name))),
    }
}

/// Raw `visual` and optional `audio` blocks from an AVFS feature file.
pub fn read_feature_blocks(path: &Path) -> Result<(Matrix, Option<Matrix>)> {
    let tensors = avfs::read_file(path)?;
    let find = |name: &str| tensors.iter().find(|t| t.name == name);
    let visual = find("visual")
        .ok_or_else(|| Error::format(path, "missing visual tensor"))
        .and_then(|t| f32_matrix(t, path))?;
    let audio = find("audio").map(|t| f32_matrix(t, path)).transpose()?;
    Ok((visual, audio))
}

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<()> {
    avfs::write_file(path, &seq.to_tensors())
}
