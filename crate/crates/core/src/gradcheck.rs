//! Central-difference verification of analytic gradients.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// A named, ordered collection of trainable matrices.
///
/// `tensors` and `tensors_mut` must list the same matrices in the same order.
/// Names use `group.member` form; the group is everything before the first dot.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

impl Parameters for Vec<Matrix> {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.iter()
            .enumerate()
            .map(|(i, m)| (format!("param.{i}"), m))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.iter_mut().collect()
    }
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    pub tolerance: f64,
    /// Number of coordinates to probe; all of them when the model is smaller.
    pub samples: usize,
    /// Lower bound on the relative-error denominator, so that coordinates
    /// with (near-)zero gradient are compared absolutely. With `h = 1e-5`
    /// the central difference carries roughly `1e-11` of rounding noise, so
    /// relative error below `1e-6` in magnitude says nothing about the
    /// analytic value.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            samples: 100,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordinateCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub coordinates: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.coordinates.iter().all(|c| c.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.coordinates
            .iter()
            .map(|c| c.relative_error)
            .fold(0.0, f64::max)
    }

    /// Worst relative error per parameter group.
    pub fn by_group(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for c in &self.coordinates {
            let e = out.entry(group_of(&c.tensor).to_string()).or_insert(0.0);
            *e = f64::max(*e, c.relative_error);
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` (one gradient matrix per parameter tensor) against
/// `(f(θ + h e_k) − f(θ − h e_k)) / 2h` on a random subset of coordinates.
///
/// Every probed coordinate is restored to its original value before the next
/// one is perturbed.
pub fn finite_diff_check<P, F, R>(
    f: F,
    params: &mut P,
    analytic: &[Matrix],
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    P: Parameters + ?Sized,
    F: FnMut(&P) -> Result<f64>,
    R: Rng + ?Sized,
{
    finite_diff_check_where(f, params, analytic, |_| true, opts, rng)
}

/// As [`finite_diff_check`], sampling only from tensors whose name passes
/// `include`.
pub fn finite_diff_check_where<P, F, I, R>(
    mut f: F,
    params: &mut P,
    analytic: &[Matrix],
    include: I,
    opts: &GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    P: Parameters + ?Sized,
    F: FnMut(&P) -> Result<f64>,
    I: Fn(&str) -> bool,
    R: Rng + ?Sized,
{
    if opts.step <= 0.0 || !opts.step.is_finite() {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {}",
            opts.step
        )));
    }
    let layout: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.len()))
        .collect();
    if layout.len() != analytic.len() {
        return Err(Error::LengthMismatch {
            op: "finite_diff_check",
            left: layout.len(),
            right: analytic.len(),
        });
    }
    for ((_, len), g) in layout.iter().zip(analytic) {
        if *len != g.len() {
            return Err(Error::Dimension {
                op: "finite_diff_check",
                expected: *len,
                actual: g.len(),
            });
        }
    }

    // excluded tensors count as empty while sampling
    let eligible: Vec<(String, usize)> = layout
        .iter()
        .map(|(n, l)| (n.clone(), if include(n) { *l } else { 0 }))
        .collect();
    let total: usize = eligible.iter().map(|(_, l)| l).sum();
    let mut picks: Vec<usize> = if opts.samples >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(rng, total, opts.samples).into_vec()
    };
    picks.sort_unstable();

    let mut coordinates = Vec::with_capacity(picks.len());
    for flat in picks {
        let (tensor_idx, index) = locate(&eligible, flat);
        let original = params.tensors_mut()[tensor_idx].data()[index];

        params.tensors_mut()[tensor_idx].data_mut()[index] = original + opts.step;
        let plus = f(params);
        params.tensors_mut()[tensor_idx].data_mut()[index] = original - opts.step;
        let minus = f(params);
        params.tensors_mut()[tensor_idx].data_mut()[index] = original;

        let numeric = (plus? - minus?) / (2.0 * opts.step);
        let analytic_value = analytic[tensor_idx].data()[index];
        let relative_error = relative_error(analytic_value, numeric, opts.floor);
        coordinates.push(CoordinateCheck {
            tensor: layout[tensor_idx].0.clone(),
            index,
            analytic: analytic_value,
            numeric,
            relative_error,
            passed: relative_error <= opts.tolerance,
        });
    }

    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        coordinates,
    })
}

fn locate(layout: &[(String, usize)], mut flat: usize) -> (usize, usize) {
    for (i, (_, len)) in layout.iter().enumerate() {
        if flat < *len {
            return (i, flat);
        }
        flat -= len;
    }
    unreachable!("flat index beyond parameter count")
}

/// Finite-difference check of one model variant on a random sequence.
#[derive(Clone, Debug, Serialize)]
pub struct VariantCheck {
    pub variant: crate::model::ModelVariant,
    pub passed: bool,
    pub max_relative_error: f64,
    /// Worst relative error per parameter group.
    pub groups: BTreeMap<String, f64>,
    pub report: GradCheckReport,
}

#[derive(Clone, Copy, Debug)]
pub struct VariantCheckSetup {
    pub hidden_dim: usize,
    pub length: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub seed: u64,
    /// Deliberately skew the analytic gradient, to exercise the failure path.
    pub corrupt: bool,
}

impl Default for VariantCheckSetup {
    fn default() -> Self {
        VariantCheckSetup {
            hidden_dim: 4,
            length: 10,
            visual_dim: 6,
            audio_dim: 4,
            seed: 0,
            corrupt: false,
        }
    }
}

/// Samples coordinates only from the groups the variant uses; the others
/// provably carry zero gradient and would pass trivially.
pub fn check_variant(
    variant: crate::model::ModelVariant,
    setup: &VariantCheckSetup,
    opts: &GradCheckOptions,
) -> Result<VariantCheck> {
    use crate::data::FeatureSequence;
    use crate::model::{evaluate_loss, loss_and_gradients, AvrnParams, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let cfg = ModelConfig::new(variant, setup.visual_dim, setup.audio_dim, setup.hidden_dim);
    let mut params = AvrnParams::init(cfg, &mut rng)?;
    let n = setup.length;
    let feats = FeatureSequence::new(
        format!("gradcheck-{variant}"),
        Matrix::uniform(n, setup.visual_dim, 1, &mut rng),
        Matrix::uniform(n, setup.audio_dim, 1, &mut rng),
    )?;
    let target: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();

    let (_, mut grads) = loss_and_gradients(&params, &feats, &target)?;
    if setup.corrupt {
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v = 1.5 * *v + 1e-3);
        }
    }
    let active = variant.active_groups();
    let report = finite_diff_check_where(
        |p: &AvrnParams| evaluate_loss(p, &feats, &target),
        &mut params,
        &grads,
        |name| active.contains(&group_of(name)),
        opts,
        &mut rng,
    )?;
    Ok(VariantCheck {
        variant,
        passed: report.passed(),
        max_relative_error: report.max_relative_error(),
        groups: report.by_group(),
        report,
    })
}
