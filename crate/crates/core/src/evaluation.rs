//! Summary overlap metrics and rank correlations.

use serde::{Deserialize, Serialize};

use crate::data::annotation::{downsample_mean, VideoAnnotation};
use crate::error::{Error, Result};
use crate::segmentation::{select_summary, shot_scores, ShotPartition, ShotReduction, SummaryMask};

/// How per-annotator results combine into one video score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Report the annotator with the highest F (with that annotator's P and R).
    Max,
    #[default]
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

/// Which F formula to apply to P and R.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FMeasure {
    /// `2PR / (P + R)`.
    #[default]
    Harmonic,
    /// `PR / (P + R)`, without the factor of two.
    Unscaled,
}

impl FMeasure {
    pub fn combine(self, p: f64, r: f64) -> f64 {
        if p + r == 0.0 {
            return 0.0;
        }
        let f = p * r / (p + r);
        match self {
            FMeasure::Harmonic => 2.0 * f,
            FMeasure::Unscaled => f,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Precision, recall and F of `pred` against `human`. An empty side gives a
/// zero for the metric that would divide by it.
pub fn prf(pred: &[bool], human: &[bool], formula: FMeasure) -> Result<Prf> {
    if pred.len() != human.len() {
        return Err(Error::LengthMismatch {
            op: "prf",
            left: pred.len(),
            right: human.len(),
        });
    }
    let overlap = pred.iter().zip(human).filter(|(a, b)| **a && **b).count() as f64;
    let n_pred = pred.iter().filter(|&&v| v).count() as f64;
    let n_human = human.iter().filter(|&&v| v).count() as f64;
    let precision = if n_pred > 0.0 { overlap / n_pred } else { 0.0 };
    let recall = if n_human > 0.0 { overlap / n_human } else { 0.0 };
    Ok(Prf {
        precision,
        recall,
        f_measure: formula.combine(precision, recall),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub per_annotator: Vec<Prf>,
}

pub fn aggregate(results: &[Prf], mode: Aggregation) -> Result<EvalResult> {
    if results.is_empty() {
        return Err(Error::EmptySequence("aggregate"));
    }
    let (precision, recall, f_measure) = match mode {
        Aggregation::Max => {
            // first annotator wins ties
            let best = results
                .iter()
                .fold(&results[0], |best, r| if r.f_measure > best.f_measure { r } else { best });
            (best.precision, best.recall, best.f_measure)
        }
        Aggregation::Mean => {
            let k = results.len() as f64;
            (
                results.iter().map(|r| r.precision).sum::<f64>() / k,
                results.iter().map(|r| r.recall).sum::<f64>() / k,
                results.iter().map(|r| r.f_measure).sum::<f64>() / k,
            )
        }
    };
    Ok(EvalResult {
        precision,
        recall,
        f_measure,
        per_annotator: results.to_vec(),
    })
}

/// A correlation coefficient; `undefined` marks a degenerate input
/// (all ties or zero rank variance) reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub undefined: bool,
}

impl Correlation {
    fn defined(value: f64) -> Self {
        Correlation {
            value: value.clamp(-1.0, 1.0),
            undefined: false,
        }
    }

    const UNDEFINED: Correlation = Correlation {
        value: 0.0,
        undefined: true,
    };
}

fn check_pair(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            op,
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Config(format!("{op} needs at least two values, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Config(format!("{op} input contains NaN")));
    }
    Ok(())
}

/// Number of tied pairs in a run-sorted sequence, `Σ t(t−1)/2`.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts in place and returns the number of inversions (strictly greater
/// element before a smaller one).
fn count_swaps(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid]) + count_swaps(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Kendall's τ-b in O(n log n) (Knight's algorithm).
pub fn kendall(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check_pair("kendall", a, b)?;
    let n = a.len() as u64;
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));

    let n0 = n * (n - 1) / 2;
    let n1 = tied_pairs(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let n3 = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = count_swaps(&mut ys);
    let n2 = tied_pairs(&ys);

    if n0 == n1 || n0 == n2 {
        return Ok(Correlation::UNDEFINED);
    }
    // concordant − discordant = n0 − n1 − n2 + n3 − 2·swaps
    let diff = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let denom = ((n0 - n1) as f64).sqrt() * ((n0 - n2) as f64).sqrt();
    Ok(Correlation::defined(diff / denom))
}

/// 1-based ranks with ties sharing their average rank.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman's ρ as the Pearson correlation of mid-ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check_pair("spearman", a, b)?;
    let (ra, rb) = (mid_ranks(a), mid_ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(Correlation::UNDEFINED);
    }
    Ok(Correlation::defined(sab / (saa.sqrt() * sbb.sqrt())))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub kendall_tau: f64,
    pub spearman_rho: f64,
    /// Annotators whose τ or ρ was undefined (counted as 0 in the average).
    pub undefined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub budget: f64,
    pub aggregation: Aggregation,
    #[serde(default)]
    pub formula: FMeasure,
    #[serde(default)]
    pub reduction: ShotReduction,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            budget: crate::segmentation::DEFAULT_BUDGET,
            aggregation: Aggregation::Mean,
            formula: FMeasure::Harmonic,
            reduction: ShotReduction::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEvaluation {
    pub overlap: EvalResult,
    pub rank: RankCorrelation,
    /// Predicted summary on the model grid.
    pub summary: SummaryMask,
}

/// Fits a vector to `n` entries, cutting or repeating the last value.
fn fit_len(mut v: Vec<f64>, n: usize) -> Vec<f64> {
    let last = v.last().copied().unwrap_or(0.0);
    v.resize(n, last);
    v
}

/// Human summaries at the original frame rate. When an annotation carries
/// only scores, each annotator's grid-level scores pass through the same
/// shot selection as the prediction.
pub fn human_summaries(
    annotation: &VideoAnnotation,
    part: &ShotPartition,
    stride: usize,
    opts: &EvalOptions,
) -> Result<Vec<Vec<bool>>> {
    if !annotation.summaries.is_empty() {
        return Ok(annotation.summary_masks());
    }
    let frames = annotation.frame_count();
    annotation
        .scores
        .iter()
        .map(|s| {
            let grid = fit_len(downsample_mean(s, stride), part.len());
            let shots = shot_scores(part, &grid, opts.reduction)?;
            Ok(select_summary(&shots, part, opts.budget)?.expand(stride, frames))
        })
        .collect()
}

/// Scores a predicted importance curve against one video's annotations.
///
/// Overlap metrics compare masks at the original frame rate; rank
/// correlations compare the prediction with each annotator's scores
/// downsampled to the model grid, averaged over annotators.
pub fn evaluate_video(
    predicted: &[f64],
    annotation: &VideoAnnotation,
    part: &ShotPartition,
    stride: usize,
    opts: &EvalOptions,
) -> Result<VideoEvaluation> {
    let n = predicted.len();
    if part.len() != n {
        return Err(Error::LengthMismatch {
            op: "evaluate_video",
            left: part.len(),
            right: n,
        });
    }
    let shots = shot_scores(part, predicted, opts.reduction)?;
    let summary = select_summary(&shots, part, opts.budget)?;
    let frames = annotation.frame_count();
    let pred_frames = summary.expand(stride, frames);

    let humans = human_summaries(annotation, part, stride, opts)?;
    if humans.is_empty() {
        return Err(Error::EmptySequence("human annotations"));
    }
    let per = humans
        .iter()
        .map(|h| prf(&pred_frames, h, opts.formula))
        .collect::<Result<Vec<_>>>()?;
    let overlap = aggregate(&per, opts.aggregation)?;

    let references = annotation.annotator_scores();
    let (mut tau, mut rho, mut undefined) = (0.0, 0.0, 0);
    for r in &references {
        let grid = fit_len(downsample_mean(r, stride), n);
        let t = kendall(predicted, &grid)?;
        let s = spearman(predicted, &grid)?;
        tau += t.value;
        rho += s.value;
        if t.undefined || s.undefined {
            undefined += 1;
        }
    }
    let k = references.len() as f64;
    Ok(VideoEvaluation {
        overlap,
        rank: RankCorrelation {
            kendall_tau: tau / k,
            spearman_rho: rho / k,
            undefined,
        },
        summary,
    })
}

/// One row of exported results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub video_id: String,
    pub split: usize,
    pub variant: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub tau: f64,
    pub rho: f64,
}

impl ResultRecord {
    pub const CSV_HEADER: &'static str = "video_id,split,variant,precision,recall,f_measure,tau,rho";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.video_id, self.split, self.variant, self.precision, self.recall, self.f_measure, self.tau, self.rho
        )
    }
}

/// Column means of the numeric fields, labelled `video_id`.
pub fn mean_record(rows: &[ResultRecord], video_id: &str, split: usize, variant: &str) -> ResultRecord {
    let k = rows.len().max(1) as f64;
    let avg = |f: fn(&ResultRecord) -> f64| rows.iter().map(f).sum::<f64>() / k;
    ResultRecord {
        video_id: video_id.to_string(),
        split,
        variant: variant.to_string(),
        precision: avg(|r| r.precision),
        recall: avg(|r| r.recall),
        f_measure: avg(|r| r.f_measure),
        tau: avg(|r| r.tau),
        rho: avg(|r| r.rho),
    }
}

pub fn to_csv(rows: &[ResultRecord]) -> String {
    let mut out = String::from(ResultRecord::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Uniform random importance scores, the trivial baseline.
pub fn random_scores<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>()).collect()
}
