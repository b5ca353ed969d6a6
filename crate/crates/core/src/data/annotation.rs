use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Human annotations of one video at its original frame rate.
///
/// `scores` holds per-annotator frame-level importance (any non-negative
/// scale), `summaries` per-annotator 0/1 selections. Either may be empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoAnnotation {
    pub frame_rate: f64,
    #[serde(default)]
    pub scores: Vec<Vec<f64>>,
    #[serde(default)]
    pub summaries: Vec<Vec<u8>>,
}

impl VideoAnnotation {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ann: VideoAnnotation =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        ann.validate().map_err(|m| Error::format(path, m))?;
        Ok(ann)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.scores.is_empty() && self.summaries.is_empty() {
            return Err("annotation has no annotators".into());
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(format!("invalid frame rate {}", self.frame_rate));
        }
        let n = self.frame_count();
        if n == 0 {
            return Err("annotation vectors are empty".into());
        }
        if self.scores.iter().any(|s| s.len() != n) || self.summaries.iter().any(|s| s.len() != n) {
            return Err("annotator vectors differ in length".into());
        }
        if self.scores.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("scores must be finite and non-negative".into());
        }
        if self.summaries.iter().flatten().any(|&v| v > 1) {
            return Err("summary entries must be 0 or 1".into());
        }
        Ok(())
    }

    /// Number of frames at the original frame rate.
    pub fn frame_count(&self) -> usize {
        self.scores
            .first()
            .map(Vec::len)
            .or_else(|| self.summaries.first().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn summary_masks(&self) -> Vec<Vec<bool>> {
        self.summaries
            .iter()
            .map(|s| s.iter().map(|&v| v == 1).collect())
            .collect()
    }

    /// Per-annotator frame scores: the explicit scores when present,
    /// otherwise the summaries read as 0/1 scores.
    pub fn annotator_scores(&self) -> Vec<Vec<f64>> {
        if !self.scores.is_empty() {
            self.scores.clone()
        } else {
            self.summaries
                .iter()
                .map(|s| s.iter().map(|&v| v as f64).collect())
                .collect()
        }
    }
}

/// Interval means over consecutive blocks of `stride` values; the last block
/// may be shorter.
pub fn downsample_mean(values: &[f64], stride: usize) -> Vec<f64> {
    let stride = stride.max(1);
    values
        .chunks(stride)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Frame-level supervision on the model grid.
///
/// Annotators are averaged per frame. Values already inside `[0, 1]` are kept
/// as they are; otherwise the consolidated curve is min-max rescaled. The
/// result is then downsampled to one value per `stride` frames.
pub fn make_ground_truth(annotation: &VideoAnnotation, stride: usize) -> Result<Vec<f64>> {
    let per_annotator = annotation.annotator_scores();
    if per_annotator.is_empty() {
        return Err(Error::EmptySequence("ground truth annotators"));
    }
    let n = per_annotator[0].len();
    if per_annotator.iter().any(|s| s.len() != n) {
        return Err(Error::Config("annotator vectors differ in length".into()));
    }
    let count = per_annotator.len() as f64;
    let mut mean: Vec<f64> = (0..n)
        .map(|t| per_annotator.iter().map(|s| s[t]).sum::<f64>() / count)
        .collect();

    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo < 0.0 || hi > 1.0 {
        if hi > lo {
            mean.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        } else {
            mean.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
    }
    Ok(downsample_mean(&mean, stride))
}
