//! Run settings, layered as defaults, then a JSON file, then flags.

use std::path::{Path, PathBuf};

use avrn::data::Organization;
use avrn::evaluation::FMeasure;
use avrn::model::ModelVariant;
use avrn::pipeline::{Experiment, SegmentationConfig};
use avrn::segmentation::{ShotReduction, DEFAULT_BUDGET};
use avrn::train::TrainConfig;
use avrn::{Error, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Target dataset; the first one in the manifest when unset.
    pub dataset: Option<String>,
    pub organization: Organization,
    pub variant: ModelVariant,
    pub budget: f64,
    /// Drives splits, initialization and shuffling. Overrides `train.seed`.
    pub seed: u64,
    pub out: PathBuf,
    pub elementwise_gate: bool,
    pub scaled_attention: bool,
    pub formula: FMeasure,
    pub reduction: ShotReduction,
    pub train: TrainConfig,
    pub segmentation: SegmentationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            dataset: None,
            organization: Organization::Canonical,
            variant: ModelVariant::Full,
            budget: DEFAULT_BUDGET,
            seed: 0,
            out: PathBuf::from("out"),
            elementwise_gate: false,
            scaled_attention: false,
            formula: FMeasure::Harmonic,
            reduction: ShotReduction::Mean,
            train: TrainConfig::default(),
            segmentation: SegmentationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment().validate()
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::Config("no manifest given (use --manifest or the config file)".into()))
    }

    pub fn experiment(&self) -> Experiment {
        let mut train = self.train.clone();
        train.seed = self.seed;
        Experiment {
            variant: self.variant,
            elementwise_gate: self.elementwise_gate,
            scaled_attention: self.scaled_attention,
            train,
            budget: self.budget,
            formula: self.formula,
            reduction: self.reduction,
            segmentation: self.segmentation.clone(),
        }
    }
}

/// Flags shared by the commands that run the pipeline.
#[derive(Args, Clone, Debug, Default)]
pub struct RunFlags {
    /// JSON run configuration; flags given here take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Target dataset name.
    #[arg(long)]
    pub dataset: Option<String>,
    /// canonical, augmented or transfer.
    #[arg(long)]
    pub organization: Option<Organization>,
    #[arg(long)]
    pub variant: Option<ModelVariant>,
    /// Summary length as a fraction of the video.
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunFlags {
    /// Applies the layers on top of `base`: the config file, then the flags.
    pub fn resolve_over(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::read(path)?,
            None => base,
        };
        if let Some(v) = &self.manifest {
            cfg.manifest = Some(v.clone());
        }
        if let Some(v) = &self.dataset {
            cfg.dataset = Some(v.clone());
        }
        if let Some(v) = self.organization {
            cfg.organization = v;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.budget {
            cfg.budget = v;
        }
        if let Some(v) = self.hidden_dim {
            cfg.train.hidden_dim = v;
        }
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        self.resolve_over(RunConfig::default())
    }
}
