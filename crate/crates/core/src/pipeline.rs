//! Train and evaluate over a loaded dataset and a split plan.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitPlan, VideoRecord};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_video, mean_record, EvalOptions, FMeasure, ResultRecord, VideoEvaluation};
use crate::model::{forward, AvrnParams, ModelConfig, ModelVariant};
use crate::segmentation::{kts_segment, ShotPartition, ShotReduction, DEFAULT_BUDGET};
use crate::tensor::Matrix;
use crate::train::{init_params, train, Example, TrainConfig, TrainTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    /// Upper bound on shots; `None` means one shot per `steps_per_shot` steps.
    pub max_shots: Option<usize>,
    pub steps_per_shot: usize,
    pub penalty: f64,
    /// Scale feature rows to unit length before segmenting.
    pub normalize: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            max_shots: None,
            steps_per_shot: 4,
            penalty: 0.5,
            normalize: true,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_shot == 0 || self.max_shots == Some(0) {
            return Err(Error::Config("shot limits must be positive".into()));
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(Error::Config(format!("penalty must be non-negative, got {}", self.penalty)));
        }
        Ok(())
    }
}

pub fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Shot boundaries for a video: the manifest's own when listed, otherwise
/// kernel temporal segmentation of the visual features.
pub fn shots_for(video: &VideoRecord, cfg: &SegmentationConfig) -> Result<ShotPartition> {
    if let Some(p) = &video.shots {
        return Ok(p.clone());
    }
    let n = video.features.len();
    let feats = if cfg.normalize {
        normalize_rows(&video.features.visual)
    } else {
        video.features.visual.clone()
    };
    let max_shots = cfg.max_shots.unwrap_or(n.div_ceil(cfg.steps_per_shot)).max(1);
    kts_segment(&feats, max_shots, cfg.penalty)
}

/// Settings shared by every split of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub variant: ModelVariant,
    #[serde(default)]
    pub elementwise_gate: bool,
    #[serde(default)]
    pub scaled_attention: bool,
    pub train: TrainConfig,
    pub budget: f64,
    #[serde(default)]
    pub formula: FMeasure,
    #[serde(default)]
    pub reduction: ShotReduction,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
}

impl Experiment {
    pub fn new(variant: ModelVariant, train: TrainConfig) -> Self {
        Experiment {
            variant,
            elementwise_gate: false,
            scaled_attention: false,
            train,
            budget: DEFAULT_BUDGET,
            formula: FMeasure::Harmonic,
            reduction: ShotReduction::Mean,
            segmentation: SegmentationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.segmentation.validate()?;
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return Err(Error::Config(format!("budget must be in (0, 1], got {}", self.budget)));
        }
        Ok(())
    }

    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        let mut c = ModelConfig::new(
            self.variant,
            dataset.visual_dim(),
            dataset.audio_dim(),
            self.train.hidden_dim,
        );
        c.elementwise_gate = self.elementwise_gate;
        c.scaled_attention = self.scaled_attention;
        c
    }
}

fn lookup<'a>(dataset: &'a Dataset, id: &str) -> Result<&'a VideoRecord> {
    dataset
        .get(id)
        .ok_or_else(|| Error::data(id, "listed in split but not in manifest"))
}

/// Trains a fresh model on the plan's training videos. Initialization and
/// example order derive from the training seed and the split index.
pub fn train_split(dataset: &Dataset, plan: &SplitPlan, exp: &Experiment) -> Result<(AvrnParams, TrainTrace)> {
    exp.validate()?;
    let videos = plan
        .train
        .iter()
        .map(|id| lookup(dataset, id))
        .collect::<Result<Vec<_>>>()?;
    let examples: Vec<Example<'_>> = videos
        .iter()
        .map(|v| Example {
            features: &v.features,
            target: &v.target,
        })
        .collect();
    let mut cfg = exp.train.clone();
    cfg.seed = split_seed(exp.train.seed, plan.split_index);
    let mut params = init_params(exp.model_config(dataset), cfg.seed)?;
    let trace = train(&mut params, &examples, &cfg)?;
    Ok((params, trace))
}

/// Distinct, reproducible seed per split.
pub fn split_seed(seed: u64, split_index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(split_index as u64)
}

pub fn eval_options(dataset: &Dataset, video: &VideoRecord, exp: &Experiment) -> EvalOptions {
    EvalOptions {
        budget: exp.budget,
        aggregation: dataset.aggregation_for(&video.entry.dataset),
        formula: exp.formula,
        reduction: exp.reduction,
    }
}

pub fn evaluate_one(
    dataset: &Dataset,
    video: &VideoRecord,
    predicted: &[f64],
    exp: &Experiment,
) -> Result<(ShotPartition, VideoEvaluation)> {
    let part = shots_for(video, &exp.segmentation)?;
    let opts = eval_options(dataset, video, exp);
    let ev = evaluate_video(predicted, &video.annotation, &part, video.entry.stride, &opts)?;
    Ok((part, ev))
}

/// Per-video rows for the plan's test videos, followed by their mean
/// (labelled `mean`).
pub fn evaluate_split(
    dataset: &Dataset,
    plan: &SplitPlan,
    params: &AvrnParams,
    exp: &Experiment,
) -> Result<Vec<ResultRecord>> {
    let mut rows = Vec::with_capacity(plan.test.len() + 1);
    for id in &plan.test {
        let video = lookup(dataset, id)?;
        let scores = forward(params, &video.features)?.scores;
        let (_, ev) = evaluate_one(dataset, video, &scores, exp)?;
        rows.push(ResultRecord {
            video_id: id.clone(),
            split: plan.split_index,
            variant: exp.variant.name().to_string(),
            precision: ev.overlap.precision,
            recall: ev.overlap.recall,
            f_measure: ev.overlap.f_measure,
            tau: ev.rank.kendall_tau,
            rho: ev.rank.spearman_rho,
        });
    }
    let mean = mean_record(&rows, "mean", plan.split_index, exp.variant.name());
    rows.push(mean);
    Ok(rows)
}
