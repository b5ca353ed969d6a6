//! Shot boundaries, shot-level scores and budgeted key-shot selection.
//!
//! Boundaries follow the `[0, s_1, …, s_{m−1}, n]` convention: shot `i`
//! (zero-based) covers timesteps `boundaries[i]..boundaries[i + 1]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_BUDGET: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ShotPartition {
    boundaries: Vec<usize>,
}

impl TryFrom<Vec<usize>> for ShotPartition {
    type Error = Error;

    fn try_from(boundaries: Vec<usize>) -> Result<Self> {
        ShotPartition::new(boundaries)
    }
}

impl From<ShotPartition> for Vec<usize> {
    fn from(p: ShotPartition) -> Self {
        p.boundaries
    }
}

impl ShotPartition {
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        let valid = boundaries.len() >= 2
            && boundaries[0] == 0
            && boundaries.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(Error::Config(format!(
                "shot boundaries must start at 0 and strictly increase, got {boundaries:?}"
            )));
        }
        Ok(ShotPartition { boundaries })
    }

    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![0, n])
    }

    /// Consecutive shots of `len` steps (the last may be shorter).
    pub fn uniform(n: usize, len: usize) -> Result<Self> {
        let len = len.max(1);
        let mut b: Vec<usize> = (0..n).step_by(len).collect();
        b.push(n);
        Self::new(b)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn shot_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Number of timesteps covered.
    pub fn len(&self) -> usize {
        *self.boundaries.last().expect("validated")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shots(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.boundaries.windows(2).map(|w| w[0]..w[1])
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.shots().map(|r| r.len()).collect()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.boundaries).expect("integers serialize")
    }
}

/// Within-segment scatter for every `[start, end)` under the dot-product
/// kernel, from 2-D prefix sums of the Gram matrix.
struct ScatterTable {
    n: usize,
    gram_prefix: Vec<f64>,
    diag_prefix: Vec<f64>,
}

impl ScatterTable {
    fn new(features: &Matrix) -> Self {
        let n = features.rows();
        let w = n + 1;
        let mut gram_prefix = vec![0.0; w * w];
        let mut diag_prefix = vec![0.0; w];
        for i in 0..n {
            let xi = features.row(i);
            for j in 0..n {
                let k = crate::tensor::dot(xi, features.row(j));
                gram_prefix[(i + 1) * w + j + 1] =
                    k + gram_prefix[i * w + j + 1] + gram_prefix[(i + 1) * w + j] - gram_prefix[i * w + j];
                if i == j {
                    diag_prefix[i + 1] = diag_prefix[i] + k;
                }
            }
        }
        ScatterTable {
            n,
            gram_prefix,
            diag_prefix,
        }
    }

    fn cost(&self, start: usize, end: usize) -> f64 {
        let w = self.n + 1;
        let block = self.gram_prefix[end * w + end] - self.gram_prefix[start * w + end]
            - self.gram_prefix[end * w + start]
            + self.gram_prefix[start * w + start];
        let diag = self.diag_prefix[end] - self.diag_prefix[start];
        (diag - block / (end - start) as f64).max(0.0)
    }
}

/// Model-selection penalty for `m` shots over `n` steps.
pub fn kts_penalty(n: usize, m: usize, penalty: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    penalty * m * ((n / m).ln() + 1.0)
}

/// Total within-shot scatter plus the shot-count penalty.
pub fn kts_objective(features: &Matrix, part: &ShotPartition, penalty: f64) -> f64 {
    let table = ScatterTable::new(features);
    let scatter: f64 = part.shots().map(|r| table.cost(r.start, r.end)).sum();
    scatter + kts_penalty(features.rows(), part.shot_count(), penalty)
}

/// Kernel temporal segmentation with a dot-product kernel.
///
/// For every shot count `m ≤ max_shots` the minimum-scatter partition is
/// found by dynamic programming over change points; the count minimizing
/// scatter plus [`kts_penalty`] wins, fewer shots on ties. When `n` is below
/// `max_shots` the count is capped at `n`.
pub fn kts_segment(features: &Matrix, max_shots: usize, penalty: f64) -> Result<ShotPartition> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptySequence("kts_segment"));
    }
    if max_shots == 0 {
        return Err(Error::Config("max_shots must be at least 1".into()));
    }
    if !penalty.is_finite() || penalty < 0.0 {
        return Err(Error::Config(format!("penalty must be non-negative, got {penalty}")));
    }
    let m_max = max_shots.min(n);
    let table = ScatterTable::new(features);

    // best[m][j]: minimal scatter of the first j steps split into m shots
    let mut best = vec![vec![f64::INFINITY; n + 1]; m_max + 1];
    let mut back = vec![vec![0usize; n + 1]; m_max + 1];
    best[0][0] = 0.0;
    for m in 1..=m_max {
        for j in m..=n {
            let mut arg = m - 1;
            let mut val = f64::INFINITY;
            for i in (m - 1)..j {
                let prev = best[m - 1][i];
                if prev.is_finite() {
                    let v = prev + table.cost(i, j);
                    if v < val {
                        val = v;
                        arg = i;
                    }
                }
            }
            best[m][j] = val;
            back[m][j] = arg;
        }
    }

    let mut chosen = 1;
    let mut chosen_cost = f64::INFINITY;
    for m in 1..=m_max {
        let total = best[m][n] + kts_penalty(n, m, penalty);
        if total < chosen_cost {
            chosen_cost = total;
            chosen = m;
        }
    }

    let mut boundaries = vec![n];
    let mut j = n;
    for m in (1..=chosen).rev() {
        j = back[m][j];
        boundaries.push(j);
    }
    boundaries.reverse();
    ShotPartition::new(boundaries)
}

/// How frame scores combine into a shot score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotScores {
    pub scores: Vec<f64>,
    pub lengths: Vec<usize>,
}

pub fn shot_scores(part: &ShotPartition, scores: &[f64], reduction: ShotReduction) -> Result<ShotScores> {
    if part.len() != scores.len() {
        return Err(Error::LengthMismatch {
            op: "shot_scores",
            left: part.len(),
            right: scores.len(),
        });
    }
    let mut out = Vec::with_capacity(part.shot_count());
    for r in part.shots() {
        let len = r.len() as f64;
        let total: f64 = scores[r].iter().sum();
        out.push(match reduction {
            ShotReduction::Mean => total / len,
            ShotReduction::Sum => total,
        });
    }
    Ok(ShotScores {
        scores: out,
        lengths: part.lengths(),
    })
}

/// Per-timestep selection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SummaryMask {
    pub selected: Vec<bool>,
}

impl SummaryMask {
    pub fn from_shots(part: &ShotPartition, chosen: &[bool]) -> Self {
        let mut selected = vec![false; part.len()];
        for (r, &on) in part.shots().zip(chosen) {
            selected[r].fill(on);
        }
        SummaryMask { selected }
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// True when every shot of `part` is either fully selected or not at all.
    pub fn is_aligned_to(&self, part: &ShotPartition) -> bool {
        part.len() == self.len() && part.shots().all(|r| self.selected[r].windows(2).all(|w| w[0] == w[1]))
    }

    /// Repeats each step over `stride` original frames, producing exactly
    /// `frames` entries; frames past the last step copy its value.
    pub fn expand(&self, stride: usize, frames: usize) -> Vec<bool> {
        let last = self.selected.last().copied().unwrap_or(false);
        (0..frames)
            .map(|f| self.selected.get(f / stride.max(1)).copied().unwrap_or(last))
            .collect()
    }
}

/// Frame budget for a fraction of `n` steps.
pub fn budget_capacity(n: usize, budget_fraction: f64) -> usize {
    // tolerate representation error such as 0.15 * 20 = 3.0000000000000004
    ((budget_fraction * n as f64) + 1e-9).floor() as usize
}

/// Exact 0/1 knapsack over shots: maximize `Σ score_i · len_i` subject to
/// `Σ len_i ≤ ⌊budget_fraction · n⌋`. Among optimal selections the one that
/// includes lower-indexed shots wins.
pub fn select_summary(scores: &ShotScores, part: &ShotPartition, budget_fraction: f64) -> Result<SummaryMask> {
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "budget fraction must be in (0, 1], got {budget_fraction}"
        )));
    }
    if scores.scores.len() != part.shot_count() || scores.lengths != part.lengths() {
        return Err(Error::LengthMismatch {
            op: "select_summary",
            left: part.shot_count(),
            right: scores.scores.len(),
        });
    }
    let capacity = budget_capacity(part.len(), budget_fraction);
    let chosen = knapsack(&scores.scores, &scores.lengths, capacity);
    Ok(SummaryMask::from_shots(part, &chosen))
}

/// Returns the chosen items. `values[i]` is a per-unit value, so item `i` is
/// worth `values[i] * weights[i]`.
pub fn knapsack(values: &[f64], weights: &[usize], capacity: usize) -> Vec<bool> {
    let m = values.len();
    let w = capacity + 1;
    // best[i * w + c]: best value using items i.. with capacity c
    let mut best = vec![0.0; (m + 1) * w];
    for i in (0..m).rev() {
        let worth = values[i] * weights[i] as f64;
        for c in 0..=capacity {
            let skip = best[(i + 1) * w + c];
            let take = if weights[i] <= c {
                worth + best[(i + 1) * w + c - weights[i]]
            } else {
                f64::NEG_INFINITY
            };
            best[i * w + c] = skip.max(take);
        }
    }
    let mut chosen = vec![false; m];
    let mut c = capacity;
    for i in 0..m {
        if weights[i] <= c {
            let take = values[i] * weights[i] as f64 + best[(i + 1) * w + c - weights[i]];
            if take >= best[(i + 1) * w + c] {
                chosen[i] = true;
                c -= weights[i];
            }
        }
    }
    chosen
}
