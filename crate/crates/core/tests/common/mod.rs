//! Plain-loop reference implementations and fixtures shared by the
//! integration tests. Nothing here touches the tape.

#![allow(dead_code)]

use avrn::attention::AttentionParams;
use avrn::data::FeatureSequence;
use avrn::fusion::FusionGateParams;
use avrn::lstm::{BiLstmLayer, LstmCellParams};
use avrn::model::{AvrnParams, ModelConfig, ModelVariant};
use avrn::Matrix;
use rand::Rng;

pub type Seq = Vec<Vec<f64>>;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn rows(m: &Matrix) -> Seq {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn to_matrix(s: &Seq) -> Matrix {
    Matrix::from_rows(s).unwrap()
}

pub fn random_seq<R: Rng>(n: usize, d: usize, rng: &mut R) -> Seq {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn random_features<R: Rng>(n: usize, dv: usize, da: usize, rng: &mut R) -> FeatureSequence {
    FeatureSequence::new(
        "oracle",
        to_matrix(&random_seq(n, dv, rng)),
        to_matrix(&random_seq(n, da, rng)),
    )
    .unwrap()
}

/// Textbook LSTM step. Gate `k` (input, forget, output, candidate) of unit
/// `j` reads column `k·d + j`; rows `0..d_in` act on `x`, the rest on `h`.
pub fn cell(p: &LstmCellParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = p.hidden_dim;
    let pre = |k: usize, j: usize| {
        let col = k * d + j;
        let mut z = p.bias.get(0, col);
        for (i, xi) in x.iter().enumerate() {
            z += xi * p.weights.get(i, col);
        }
        for (i, hi) in h.iter().enumerate() {
            z += hi * p.weights.get(p.input_dim + i, col);
        }
        z
    };
    let mut h_new = vec![0.0; d];
    let mut c_new = vec![0.0; d];
    for j in 0..d {
        let i_g = sigmoid(pre(0, j));
        let f_g = sigmoid(pre(1, j));
        let o_g = sigmoid(pre(2, j));
        let g = pre(3, j).tanh();
        c_new[j] = f_g * c[j] + i_g * g;
        h_new[j] = o_g * c_new[j].tanh();
    }
    (h_new, c_new)
}

pub fn run_cell(p: &LstmCellParams, xs: &Seq, reverse: bool) -> Seq {
    let n = xs.len();
    let mut h = vec![0.0; p.hidden_dim];
    let mut c = vec![0.0; p.hidden_dim];
    let mut out = vec![Vec::new(); n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        (h, c) = cell(p, &xs[t], &h, &c);
        out[t] = h.clone();
    }
    out
}

pub fn layer(l: &BiLstmLayer, xs: &Seq) -> Seq {
    let fwd = run_cell(&l.forward, xs, false);
    match &l.backward {
        Some(b) => {
            let bwd = run_cell(b, xs, true);
            fwd.into_iter().zip(bwd).map(|(f, b)| [f, b].concat()).collect()
        }
        None => fwd,
    }
}

/// Returns `(c, x_av)` with the blend written as `c·h_a + (1 − c)·h_v`.
pub fn gate(p: &FusionGateParams, ha: &[f64], hv: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = p.bias.cols();
    let c: Vec<f64> = (0..k)
        .map(|j| {
            let mut z = p.bias.get(0, j);
            for i in 0..ha.len() {
                z += ha[i] * p.audio_map.get(i, j) + hv[i] * p.visual_map.get(i, j);
            }
            sigmoid(z)
        })
        .collect();
    let x = (0..ha.len())
        .map(|i| {
            let ci = if k == 1 { c[0] } else { c[i] };
            ci * ha[i] + (1.0 - ci) * hv[i]
        })
        .collect();
    (c, x)
}

fn times(x: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|j| x.iter().enumerate().map(|(i, xi)| xi * w.get(i, j)).sum())
        .collect()
}

/// Returns `(alpha, V)`.
pub fn attention(p: &AttentionParams, xs: &Seq, scaled: bool) -> (Seq, Seq) {
    let n = xs.len();
    let keys: Seq = xs.iter().map(|x| times(x, &p.key_map)).collect();
    let queries: Seq = xs.iter().map(|x| times(x, &p.query_map)).collect();
    let scale = if scaled { 1.0 / (xs[0].len() as f64).sqrt() } else { 1.0 };
    let mut alpha = Vec::with_capacity(n);
    let mut context = Vec::with_capacity(n);
    for q in &queries {
        let logits: Vec<f64> = keys
            .iter()
            .map(|k| scale * k.iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let a: Vec<f64> = e.iter().map(|v| v / z).collect();
        let mut v = vec![0.0; xs[0].len()];
        for (w, x) in a.iter().zip(xs) {
            for (vi, xi) in v.iter_mut().zip(x) {
                *vi += w * xi;
            }
        }
        alpha.push(a);
        context.push(v);
    }
    (alpha, context)
}

fn pad(xs: &Seq, width: usize) -> Seq {
    xs.iter()
        .map(|x| {
            let mut x = x.clone();
            x.resize(width, 0.0);
            x
        })
        .collect()
}

/// Full reference forward pass for every variant.
pub fn model(p: &AvrnParams, f: &FeatureSequence) -> Vec<f64> {
    let c = &p.config;
    let visual = rows(&f.visual);
    let audio = rows(&f.audio);
    let concat = |parts: &[&Seq]| -> Seq {
        (0..visual.len())
            .map(|t| parts.iter().flat_map(|s| s[t].clone()).collect())
            .collect()
    };
    let fuse = |ha: &Seq, hv: &Seq| -> Seq { ha.iter().zip(hv).map(|(a, v)| gate(&p.gate, a, v).1).collect() };
    let head_in: Seq = match c.variant {
        ModelVariant::AudioOnly => layer(&p.audio_stream, &audio),
        ModelVariant::VisualOnly => layer(&p.visual_stream, &visual),
        ModelVariant::TwoStreamOnly => {
            let (ha, hv) = (layer(&p.audio_stream, &audio), layer(&p.visual_stream, &visual));
            concat(&[&ha, &hv])
        }
        ModelVariant::FusionOnly => {
            let w = c.visual_dim.max(c.audio_dim);
            let x = fuse(&pad(&audio, w), &pad(&visual, w));
            let h = layer(&p.fusion_layer, &x);
            concat(&[&x, &h])
        }
        ModelVariant::Full | ModelVariant::NoSave | ModelVariant::SingleDirection => {
            let (ha, hv) = (layer(&p.audio_stream, &audio), layer(&p.visual_stream, &visual));
            let x = fuse(&ha, &hv);
            let h = layer(&p.fusion_layer, &x);
            if c.variant == ModelVariant::NoSave {
                concat(&[&x, &h])
            } else {
                let (_, v) = attention(&p.attention, &x, c.scaled_attention);
                concat(&[&x, &h, &v])
            }
        }
    };
    head_in
        .iter()
        .map(|row| {
            let z: f64 = row
                .iter()
                .enumerate()
                .map(|(i, v)| v * p.head_weights.get(i, 0))
                .sum::<f64>()
                + p.head_bias.get(0, 0);
            sigmoid(z)
        })
        .collect()
}

pub fn small_config(variant: ModelVariant, hidden: usize) -> ModelConfig {
    ModelConfig::new(variant, 5, 3, hidden)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn seq_diff(a: &Seq, b: &Seq) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
}

/// Within-segment scatter `Σ‖x − mean‖²`, computed directly.
pub fn scatter(xs: &Seq, start: usize, end: usize) -> f64 {
    let d = xs[0].len();
    let len = (end - start) as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| xs[start..end].iter().map(|x| x[j]).sum::<f64>() / len)
        .collect();
    xs[start..end]
        .iter()
        .map(|x| x.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .sum()
}

/// Every boundary list `[0, …, n]` with at most `max_shots` shots.
pub fn all_partitions(n: usize, max_shots: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn rec(at: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if at == n {
            out.push(cur.clone());
            return;
        }
        if left == 0 {
            return;
        }
        for next in at + 1..=n {
            cur.push(next);
            rec(next, n, left - 1, cur, out);
            cur.pop();
        }
    }
    rec(0, n, max_shots, &mut vec![0], &mut out);
    out
}

/// Best subset value by enumeration; ties keep the first subset found in
/// index order.
pub fn brute_knapsack(values: &[f64], weights: &[usize], capacity: usize) -> (f64, Vec<bool>) {
    let m = values.len();
    let mut best = (0.0, vec![false; m]);
    for bits in 0u32..(1 << m) {
        let chosen: Vec<bool> = (0..m).map(|i| bits & (1 << i) != 0).collect();
        let w: usize = (0..m).filter(|&i| chosen[i]).map(|i| weights[i]).sum();
        if w > capacity {
            continue;
        }
        let v: f64 = (0..m).filter(|&i| chosen[i]).map(|i| values[i] * weights[i] as f64).sum();
        if v > best.0 {
            best = (v, chosen);
        }
    }
    best
}

/// O(n²) τ-b from pair counts.
pub fn kendall_pairs(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut conc, mut disc, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 {
                ties_a += 1;
            }
            if db == 0.0 {
                ties_b += 1;
            }
            if da != 0.0 && db != 0.0 {
                if (da > 0.0) == (db > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (conc - disc) as f64 / (((n0 - ties_a) * (n0 - ties_b)) as f64).sqrt()
}

/// Mid-ranks by counting, then Pearson.
pub fn spearman_direct(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
