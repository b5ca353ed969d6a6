//! Adam training with step learning-rate decay, one video per update.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::gradcheck::Parameters;
use crate::model::{loss_and_gradients, AvrnParams, ModelConfig};
use crate::tensor::Matrix;

pub const DEFAULT_HIDDEN_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Factor applied to the learning rate every `decay_step` epochs.
    pub decay_rate: f64,
    pub decay_step: usize,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            decay_rate: 0.1,
            decay_step: 30,
            epochs: 60,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // a zero rate is allowed: it leaves parameters untouched
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!("decay rate must be in (0, 1], got {}", self.decay_rate)));
        }
        if self.decay_step == 0 {
            return Err(Error::Config("decay step must be at least 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden dim must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during zero-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_rate.powi((epoch / self.decay_step) as i32)
    }
}

/// Parameter initialization and example order draw from separate streams of
/// the same seed.
pub fn init_params(config: ModelConfig, seed: u64) -> Result<AvrnParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AvrnParams::init(config, &mut rng)
}

fn order_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub features: &'a FeatureSequence,
    pub target: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new<P: Parameters>(params: &P) -> Self {
        let zeros: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &[Matrix], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `limit`.
/// Returns the norm before scaling.
pub fn clip_global_norm(grads: &mut [Matrix], limit: f64) -> f64 {
    let norm = grads.iter().map(Matrix::squared_norm).sum::<f64>().sqrt();
    if norm > limit {
        let s = limit / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-video loss seen during the epoch, before each update.
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Trains `params` in place for `cfg.epochs` epochs, visiting the examples in
/// a fresh seeded order every epoch.
pub fn train(params: &mut AvrnParams, examples: &[Example<'_>], cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    params.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptySequence("training set"));
    }
    let mut adam = Adam::new(params);
    let mut rng = order_rng(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let ex = examples[i];
            let (loss, mut grads) = loss_and_gradients(params, ex.features, ex.target)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch: epoch + 1, loss });
            }
            if let Some(limit) = cfg.clip_norm {
                clip_global_norm(&mut grads, limit);
            }
            adam.update(params, &grads, lr);
            total += loss;
        }
        let mean_loss = total / examples.len() as f64;
        if params.tensors().iter().any(|(_, m)| !m.is_finite()) {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                loss: f64::NAN,
            });
        }
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            learning_rate: lr,
            mean_loss,
        });
    }
    Ok(TrainTrace {
        model: params.config.clone(),
        config: cfg.clone(),
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelVariant;

    fn toy(seed: u64) -> (FeatureSequence, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = FeatureSequence::new(
            "toy",
            Matrix::uniform(6, 3, 1, &mut rng),
            Matrix::uniform(6, 2, 1, &mut rng),
        )
        .unwrap();
        (f, vec![0.1, 0.9, 0.2, 0.8, 0.3, 0.7])
    }

    fn small(variant: ModelVariant) -> AvrnParams {
        init_params(ModelConfig::new(variant, 3, 2, 3), 5).unwrap()
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 1e-5);
        assert_eq!(cfg.learning_rate_at(29), 1e-5);
        assert!((cfg.learning_rate_at(30) - 1e-6).abs() < 1e-20);
        assert!((cfg.learning_rate_at(60) - 1e-7).abs() < 1e-21);
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                learning_rate: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                decay_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                decay_step: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                clip_norm: Some(0.0),
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!((parsed.epochs, parsed.learning_rate), (3, 1e-5));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (f, g) = toy(1);
        let mut p = small(ModelVariant::Full);
        let before = p.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        train(&mut p, &[Example { features: &f, target: &g }], &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn loss_goes_down() {
        let (f, g) = toy(2);
        let mut p = small(ModelVariant::NoSave);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 30,
            ..TrainConfig::default()
        };
        let trace = train(&mut p, &[Example { features: &f, target: &g }], &cfg).unwrap();
        assert_eq!(trace.epochs.len(), 30);
        assert!(trace.final_loss().unwrap() < trace.epochs[0].mean_loss);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Matrix::filled(2, 2, 3.0), Matrix::filled(1, 1, 4.0)];
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - 52f64.sqrt()).abs() < 1e-12);
        let after: f64 = g.iter().map(Matrix::squared_norm).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_training_set() {
        let mut p = small(ModelVariant::Full);
        assert!(train(&mut p, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // bias-corrected first step is lr · g/|g| per coordinate
        let mut p = vec![Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap()];
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &[Matrix::from_vec(1, 2, vec![0.5, -2.0]).unwrap()], 0.1);
        assert!((p[0].get(0, 0) - 0.9).abs() < 1e-7);
        assert!((p[0].get(0, 1) - 1.1).abs() < 1e-7);
    }
}
