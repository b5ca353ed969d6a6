use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::annotation::{make_ground_truth, VideoAnnotation};
use super::{align, read_feature_blocks, Alignment, FeatureSequence, DEFAULT_AUDIO_DIM, DEFAULT_STRIDE};
use crate::error::{Error, Result};
use crate::evaluation::Aggregation;
use crate::segmentation::ShotPartition;
use crate::tensor::Matrix;

/// Overrides the directory that relative manifest paths resolve against.
pub const DATA_ROOT_ENV: &str = "AVRN_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Width of the zero block substituted when a file has no audio tensor.
    #[serde(default)]
    pub audio_dim: Option<usize>,
    /// Per-dataset annotator aggregation; unlisted datasets use `mean`.
    #[serde(default)]
    pub aggregation: BTreeMap<String, Aggregation>,
    pub videos: Vec<ManifestEntry>,
}

fn default_version() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub dataset: String,
    pub features: PathBuf,
    pub annotation: PathBuf,
    /// Original video frame rate.
    pub frame_rate: f64,
    /// Original frames per model timestep.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_sha256: Option<String>,
    /// Declared row counts; checked against the file when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_rows: Option<usize>,
    /// JSON array of shot boundaries on the model grid, used instead of KTS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<PathBuf>,
}

fn default_stride() -> usize {
    DEFAULT_STRIDE
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.version != 1 {
            return Err(Error::format(path, format!("unsupported manifest version {}", m.version)));
        }
        if m.videos.is_empty() {
            return Err(Error::format(path, "manifest lists no videos"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &m.videos {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::format(path, format!("duplicate video id {}", v.id)));
            }
            if v.stride == 0 {
                return Err(Error::data(&v.id, "stride must be positive"));
            }
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug)]
pub struct VideoRecord {
    pub entry: ManifestEntry,
    pub features: FeatureSequence,
    pub annotation: VideoAnnotation,
    /// Supervision `g` on the model grid, same length as the features.
    pub target: Vec<f64>,
    pub alignment: Alignment,
    pub shots: Option<ShotPartition>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.entry.id == id)
    }

    /// Video ids grouped by dataset name, in manifest order.
    pub fn by_dataset(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for v in &self.videos {
            out.entry(v.entry.dataset.clone())
                .or_default()
                .push(v.entry.id.clone());
        }
        out
    }

    pub fn aggregation_for(&self, dataset: &str) -> Aggregation {
        self.manifest
            .aggregation
            .get(dataset)
            .copied()
            .unwrap_or(Aggregation::Mean)
    }

    pub fn visual_dim(&self) -> usize {
        self.videos[0].features.visual.cols()
    }

    pub fn audio_dim(&self) -> usize {
        self.videos[0].features.audio.cols()
    }
}

/// Loads a manifest and every video it lists. Relative paths resolve against
/// `$AVRN_DATA_ROOT` when set, else the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    load_dataset_with_root(manifest_path, root.as_deref())
}

pub fn load_dataset_with_root(manifest_path: &Path, root: Option<&Path>) -> Result<Dataset> {
    let manifest = Manifest::read(manifest_path)?;
    let root = match root {
        Some(r) => r.to_path_buf(),
        None => manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    let audio_dim = manifest.audio_dim.unwrap_or(DEFAULT_AUDIO_DIM);
    let videos = manifest
        .videos
        .iter()
        .map(|e| load_video(&root, e, audio_dim))
        .collect::<Result<Vec<_>>>()?;

    let (dv, da) = (videos[0].features.visual.cols(), videos[0].features.audio.cols());
    for v in &videos {
        if v.features.visual.cols() != dv || v.features.audio.cols() != da {
            return Err(Error::data(
                &v.entry.id,
                format!(
                    "feature widths {}/{} differ from {dv}/{da}",
                    v.features.visual.cols(),
                    v.features.audio.cols()
                ),
            ));
        }
    }
    Ok(Dataset {
        root,
        manifest,
        videos,
    })
}

fn read_checked(path: &Path, expected: Option<&str>, video: &str) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::data(video, format!("{}: {e}", path.display())))?;
    if let Some(want) = expected {
        let got = sha256_hex(&bytes);
        if !got.eq_ignore_ascii_case(want) {
            return Err(Error::data(
                video,
                format!("checksum mismatch for {}: expected {want}, got {got}", path.display()),
            ));
        }
    }
    Ok(bytes)
}

fn load_video(root: &Path, entry: &ManifestEntry, audio_dim: usize) -> Result<VideoRecord> {
    let id = entry.id.as_str();
    let wrap = |e: Error| match e {
        Error::Data { .. } => e,
        other => Error::data(id, other.to_string()),
    };

    let features_path = root.join(&entry.features);
    read_checked(&features_path, entry.features_sha256.as_deref(), id)?;
    let (visual, audio) = read_feature_blocks(&features_path).map_err(wrap)?;

    if let Some(rows) = entry.visual_rows {
        if rows != visual.rows() {
            return Err(Error::data(
                id,
                format!("alignment: manifest declares {rows} visual rows, file has {}", visual.rows()),
            ));
        }
    }
    let audio_rows = audio.as_ref().map_or(0, Matrix::rows);
    if let Some(rows) = entry.audio_rows {
        if rows != audio_rows {
            return Err(Error::data(
                id,
                format!("alignment: manifest declares {rows} audio rows, file has {audio_rows}"),
            ));
        }
    }

    let (alignment, visual, audio) = match audio {
        Some(a) if a.rows() > 0 => {
            let al = align(visual.rows(), a.rows()).map_err(wrap)?;
            (al, visual.slice_rows(0, al.len), a.slice_rows(0, al.len))
        }
        // no audio track: zero block, flagged silent
        other => {
            let width = other.map_or(audio_dim, |a| if a.cols() > 0 { a.cols() } else { audio_dim });
            let al = align(visual.rows(), visual.rows()).map_err(wrap)?;
            let zeros = Matrix::zeros(visual.rows(), width);
            (al, visual, zeros)
        }
    };
    let features = FeatureSequence::new(id, visual, audio)?;

    let annotation_path = root.join(&entry.annotation);
    read_checked(&annotation_path, entry.annotation_sha256.as_deref(), id)?;
    let annotation = VideoAnnotation::read(&annotation_path).map_err(wrap)?;
    if (annotation.frame_rate - entry.frame_rate).abs() > 1e-9 {
        return Err(Error::data(
            id,
            format!(
                "annotation frame rate {} differs from manifest {}",
                annotation.frame_rate, entry.frame_rate
            ),
        ));
    }
    let mut target = make_ground_truth(&annotation, entry.stride).map_err(wrap)?;
    let n = features.len();
    match target.len() {
        len if len >= n => target.truncate(n),
        // the last partial block of frames may not have produced a feature row
        len if len + 1 == n => target.push(*target.last().expect("non-empty")),
        len => {
            return Err(Error::data(
                id,
                format!("annotation covers {len} grid cells, features have {n}"),
            ))
        }
    }

    let shots = match &entry.shots {
        Some(p) => {
            let path = root.join(p);
            let part = ShotPartition::read_json(&path).map_err(wrap)?;
            if part.len() != n {
                return Err(Error::data(
                    id,
                    format!("shot boundaries cover {} steps, features have {n}", part.len()),
                ));
            }
            Some(part)
        }
        None => None,
    };

    Ok(VideoRecord {
        entry: entry.clone(),
        features,
        annotation,
        target,
        alignment,
        shots,
    })
}
