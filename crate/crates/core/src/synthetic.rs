//! Small generated datasets with known structure.
//!
//! Each video is a run of shots; within a shot both streams stay near a
//! per-shot base vector. Importance depends on both streams through fixed
//! directions shared by every video, so a model can learn it.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::annotation::VideoAnnotation;
use crate::data::manifest::{sha256_hex, Manifest, ManifestEntry};
use crate::data::{write_features, FeatureSequence};
use crate::error::{Error, Result};
use crate::evaluation::Aggregation;
use crate::segmentation::{select_summary, shot_scores, ShotPartition, ShotReduction, DEFAULT_BUDGET};
use crate::tensor::{dot, sigmoid_scalar, Matrix};

/// How a synthetic dataset is annotated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationStyle {
    /// Per-annotator 0/1 key-shot selections only.
    Summaries,
    /// Per-annotator frame scores only.
    Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub name: String,
    pub videos: usize,
    pub style: AnnotationStyle,
    pub aggregation: Aggregation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub datasets: Vec<SyntheticDataset>,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub annotators: usize,
    pub stride: usize,
    pub frame_rate: f64,
    /// Annotator disagreement, uniform in `±noise`.
    pub noise: f64,
    /// Write true shot boundaries next to the features.
    pub write_shots: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            datasets: vec![
                SyntheticDataset {
                    name: "alpha".into(),
                    videos: 10,
                    style: AnnotationStyle::Summaries,
                    aggregation: Aggregation::Max,
                },
                SyntheticDataset {
                    name: "beta".into(),
                    videos: 10,
                    style: AnnotationStyle::Scores,
                    aggregation: Aggregation::Mean,
                },
            ],
            visual_dim: 12,
            audio_dim: 6,
            min_len: 60,
            max_len: 100,
            annotators: 3,
            stride: 15,
            frame_rate: 30.0,
            noise: 0.05,
            write_shots: false,
            seed: 0,
        }
    }
}

/// Fixed directions that importance is read along.
#[derive(Clone, Debug, PartialEq)]
pub struct Directions {
    pub visual: Vec<f64>,
    pub audio: Vec<f64>,
}

impl Directions {
    pub fn new<R: Rng + ?Sized>(visual_dim: usize, audio_dim: usize, rng: &mut R) -> Self {
        let mut unit = |d: usize| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dot(&v, &v).sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect::<Vec<_>>()
        };
        Directions {
            visual: unit(visual_dim),
            audio: unit(audio_dim),
        }
    }

    /// Importance of one timestep: the mean of a visual and an audio cue,
    /// each squashed to (0, 1).
    pub fn importance(&self, visual: &[f64], audio: &[f64]) -> f64 {
        let v = sigmoid_scalar(3.0 * dot(visual, &self.visual));
        let a = sigmoid_scalar(3.0 * dot(audio, &self.audio));
        0.5 * (v + a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub features: FeatureSequence,
    /// Noise-free importance on the model grid.
    pub importance: Vec<f64>,
    pub shots: ShotPartition,
}

fn random_shots<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ShotPartition {
    let mut b = vec![0];
    let mut at = 0;
    while at < n {
        at = (at + rng.gen_range(3..=8)).min(n);
        // avoid a trailing sliver
        if n - at < 3 {
            at = n;
        }
        b.push(at);
    }
    ShotPartition::new(b).expect("increasing")
}

/// One video of `n` steps.
pub fn generate_video<R: Rng + ?Sized>(
    id: &str,
    n: usize,
    visual_dim: usize,
    audio_dim: usize,
    dirs: &Directions,
    rng: &mut R,
) -> Result<SyntheticVideo> {
    if n == 0 {
        return Err(Error::EmptySequence("synthetic video"));
    }
    let shots = random_shots(n, rng);
    let mut visual = Matrix::zeros(n, visual_dim);
    let mut audio = Matrix::zeros(n, audio_dim);
    for r in shots.shots() {
        let base_v: Vec<f64> = (0..visual_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base_a: Vec<f64> = (0..audio_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for t in r {
            for (x, b) in visual.row_mut(t).iter_mut().zip(&base_v) {
                *x = b + rng.gen_range(-0.1..0.1);
            }
            for (x, b) in audio.row_mut(t).iter_mut().zip(&base_a) {
                *x = b + rng.gen_range(-0.1..0.1);
            }
        }
    }
    let importance = (0..n)
        .map(|t| dirs.importance(visual.row(t), audio.row(t)))
        .collect();
    Ok(SyntheticVideo {
        features: FeatureSequence::new(id, visual, audio)?,
        importance,
        shots,
    })
}

fn annotate<R: Rng + ?Sized>(
    video: &SyntheticVideo,
    cfg: &SyntheticConfig,
    style: AnnotationStyle,
    rng: &mut R,
) -> Result<VideoAnnotation> {
    let mut scores = Vec::new();
    let mut summaries = Vec::new();
    for _ in 0..cfg.annotators {
        let noisy: Vec<f64> = video
            .importance
            .iter()
            .map(|g| (g + rng.gen_range(-cfg.noise..=cfg.noise)).clamp(0.0, 1.0))
            .collect();
        match style {
            AnnotationStyle::Scores => scores.push(
                noisy
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v, cfg.stride))
                    .collect(),
            ),
            AnnotationStyle::Summaries => {
                let s = shot_scores(&video.shots, &noisy, ShotReduction::Mean)?;
                let mask = select_summary(&s, &video.shots, DEFAULT_BUDGET)?;
                summaries.push(
                    mask.expand(cfg.stride, video.importance.len() * cfg.stride)
                        .into_iter()
                        .map(u8::from)
                        .collect(),
                );
            }
        }
    }
    Ok(VideoAnnotation {
        frame_rate: cfg.frame_rate,
        scores,
        summaries,
    })
}

/// Writes features, annotations and a manifest under `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, cfg: &SyntheticConfig) -> Result<PathBuf> {
    if cfg.min_len == 0 || cfg.max_len < cfg.min_len || cfg.annotators == 0 || cfg.stride == 0 {
        return Err(Error::Config("invalid synthetic dataset configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dirs = Directions::new(cfg.visual_dim, cfg.audio_dim, &mut rng);
    let mut entries = Vec::new();
    let mut aggregation = std::collections::BTreeMap::new();
    for ds in &cfg.datasets {
        aggregation.insert(ds.name.clone(), ds.aggregation);
        for k in 0..ds.videos {
            let id = format!("{}_{:02}", ds.name, k + 1);
            let n = rng.gen_range(cfg.min_len..=cfg.max_len);
            let video = generate_video(&id, n, cfg.visual_dim, cfg.audio_dim, &dirs, &mut rng)?;
            let ann = annotate(&video, cfg, ds.style, &mut rng)?;

            let features = PathBuf::from(format!("features/{id}.avfs"));
            let annotation = PathBuf::from(format!("annotations/{id}.json"));
            write_features(&dir.join(&features), &video.features)?;
            let ann_json = serde_json::to_vec(&ann)?;
            write_bytes(&dir.join(&annotation), &ann_json)?;
            let shots = if cfg.write_shots {
                let p = PathBuf::from(format!("shots/{id}.json"));
                write_bytes(&dir.join(&p), video.shots.to_json().as_bytes())?;
                Some(p)
            } else {
                None
            };
            let feature_bytes = std::fs::read(dir.join(&features)).map_err(|e| Error::io(dir, e))?;
            entries.push(ManifestEntry {
                id,
                dataset: ds.name.clone(),
                features,
                annotation,
                frame_rate: cfg.frame_rate,
                stride: cfg.stride,
                features_sha256: Some(sha256_hex(&feature_bytes)),
                annotation_sha256: Some(sha256_hex(&ann_json)),
                visual_rows: Some(n),
                audio_rows: Some(n),
                shots,
            });
        }
    }
    let manifest = Manifest {
        version: 1,
        audio_dim: Some(cfg.audio_dim),
        aggregation,
        videos: entries,
    };
    let path = dir.join("manifest.json");
    write_bytes(&path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
