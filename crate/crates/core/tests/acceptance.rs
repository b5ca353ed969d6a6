//! Acceptance suite: one line per criterion, non-zero exit when any hard
//! criterion fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use avrn::attention::{attend_all, AttentionParams};
use avrn::checkpoint;
use avrn::data::{avfs, load_dataset_with_root, make_splits, Organization};
use avrn::evaluation::{kendall, prf, spearman, FMeasure};
use avrn::fusion::{gate, FusionGateParams};
use avrn::gradcheck::{check_variant, GradCheckOptions, VariantCheckSetup};
use avrn::model::{evaluate_loss, ModelConfig, ModelVariant};
use avrn::pipeline::{evaluate_split, train_split, Experiment};
use avrn::segmentation::{
    budget_capacity, kts_objective, kts_penalty, kts_segment, select_summary, ShotPartition, ShotScores,
};
use avrn::synthetic::{generate_video, write_dataset, Directions, SyntheticConfig};
use avrn::train::{init_params, train, Example, TrainConfig};
use common::{all_partitions, brute_knapsack, random_seq, scatter, to_matrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let opts = GradCheckOptions::default();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for (k, variant) in ModelVariant::ALL.into_iter().enumerate() {
        let setup = VariantCheckSetup {
            seed: 100 + k as u64,
            ..VariantCheckSetup::default()
        };
        match check_variant(variant, &setup, &opts) {
            Ok(c) => {
                worst = worst.max(c.max_relative_error);
                if !c.passed || c.report.coordinates.len() != opts.samples {
                    failed.push(format!("{variant} ({:.2e})", c.max_relative_error));
                }
            }
            Err(e) => failed.push(format!("{variant}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let passed = failed.is_empty() && elapsed < Duration::from_secs(60);
    outcome(
        passed,
        format!(
            "7 variants, hidden 4, length 10, 100 coordinates each; worst relative error {worst:.2e} (limit 1e-4); {:.1}s of 60s{}",
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    )
}

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst_sum = 0.0f64;
    let mut mismatches = 0;
    for trial in 0..50 {
        let n = rng.gen_range(2..=30);
        let d = rng.gen_range(2..=8);
        let p = AttentionParams::init(d, &mut rng);
        let xs = random_seq(n, d, &mut rng);
        let scaled = trial % 2 == 1;
        let base = attend_all(&p, &to_matrix(&xs), scaled).unwrap();
        for r in 0..n {
            let s: f64 = base.weights.row(r).iter().sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
        }

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
        let out = attend_all(&p, &to_matrix(&shuffled), scaled).unwrap();
        // row k of the shuffled run is original row perm[k]
        for (k, &i) in perm.iter().enumerate() {
            let same_context = out
                .context
                .row(k)
                .iter()
                .zip(base.context.row(i))
                .all(|(a, b)| a.to_bits() == b.to_bits());
            let same_weights = perm
                .iter()
                .enumerate()
                .all(|(l, &j)| out.weights.get(k, l).to_bits() == base.weights.get(i, j).to_bits());
            if !(same_context && same_weights) {
                mismatches += 1;
            }
        }
    }
    outcome(
        worst_sum <= 1e-9 && mismatches == 0,
        format!(
            "50 sequences; worst |row sum - 1| = {worst_sum:.1e} (limit 1e-9); {mismatches} rows differ bitwise after shuffle/unshuffle"
        ),
    )
}

fn gate_convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut outside = 0;
    let mut saturated = 0;
    let d = 8;
    for pair in 0..10_000 {
        let mut p = FusionGateParams::init(d, pair % 2 == 1, &mut rng);
        let scale = rng.gen_range(0.1..4.0);
        for m in [&mut p.audio_map, &mut p.visual_map] {
            m.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        p.bias.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-3.0..3.0));
        let ha: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let hv: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let out = gate(&p, &ha, &hv).unwrap();
        if out.gate.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
            saturated += 1;
        }
        for i in 0..d {
            let (lo, hi) = (ha[i].min(hv[i]), ha[i].max(hv[i]));
            if out.fused[i] < lo || out.fused[i] > hi {
                outside += 1;
            }
        }
    }
    outcome(
        outside == 0 && saturated == 0,
        format!("10000 pairs; {outside} coordinates outside the envelope; {saturated} gates not strictly inside (0, 1)"),
    )
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let mut finals = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let dirs = Directions::new(8, 4, &mut rng);
        let videos: Vec<_> = (0..2)
            .map(|k| generate_video(&format!("toy{k}"), 20, 8, 4, &dirs, &mut rng).unwrap())
            .collect();
        let examples: Vec<Example<'_>> = videos
            .iter()
            .map(|v| Example {
                features: &v.features,
                target: &v.importance,
            })
            .collect();
        let mut params = init_params(ModelConfig::new(ModelVariant::Full, 8, 4, 8), seed).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            decay_rate: 0.5,
            decay_step: 100,
            epochs: 200,
            hidden_dim: 8,
            seed,
            ..TrainConfig::default()
        };
        train(&mut params, &examples, &cfg).unwrap();
        let loss = videos
            .iter()
            .map(|v| evaluate_loss(&params, &v.features, &v.importance).unwrap())
            .sum::<f64>()
            / 2.0;
        finals.push(loss);
    }
    let elapsed = start.elapsed();
    let good = finals.iter().filter(|&&l| l < 0.01).count();
    let worst = finals.iter().cloned().fold(0.0, f64::max);
    outcome(
        good >= 9 && elapsed < Duration::from_secs(120),
        format!(
            "{good}/10 seeds below 0.01 after 200 epochs (worst {worst:.2e}); {:.1}s of 120s",
            elapsed.as_secs_f64()
        ),
    )
}

fn kts_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..=25);
        let d = rng.gen_range(1..=3);
        let max_shots = rng.gen_range(1..=3);
        let penalty = rng.gen_range(0.0..1.0);
        let xs = random_seq(n, d, &mut rng);
        let part = kts_segment(&to_matrix(&xs), max_shots, penalty).unwrap();
        let dp = kts_objective(&to_matrix(&xs), &part, penalty);
        let best = all_partitions(n, max_shots)
            .iter()
            .map(|b| {
                let s: f64 = b.windows(2).map(|w| scatter(&xs, w[0], w[1])).sum();
                s + kts_penalty(n, b.len() - 1, penalty)
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((dp - best).abs() / best.abs().max(1.0));
    }

    let mut missed = 0;
    for _ in 0..50 {
        let n = rng.gen_range(10..=40);
        let cut = rng.gen_range(3..=n - 3);
        let d = 4;
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = shift.iter().map(|v| v * v).sum::<f64>().sqrt();
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + 2.0 * s / norm).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                let base = if t < cut { &a } else { &b };
                base.iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect()
            })
            .collect();
        let part = kts_segment(&to_matrix(&rows), 4, 0.5).unwrap();
        let ok = part.shot_count() == 2 && part.boundaries()[1].abs_diff(cut) <= 1;
        if !ok {
            missed += 1;
        }
    }
    outcome(
        worst < 1e-9 && missed == 0,
        format!("50 exhaustive instances, worst relative gap {worst:.1e}; planted boundary missed in {missed}/50"),
    )
}

fn knapsack_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (mut wrong, mut over, mut misaligned) = (0, 0, 0);
    for trial in 0..200 {
        let m = rng.gen_range(1..=12);
        let lengths: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=10)).collect();
        let scores: Vec<f64> = (0..m)
            .map(|_| {
                if trial % 3 == 0 {
                    // coarse values force ties
                    rng.gen_range(0..4) as f64 / 4.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        let mut b = vec![0];
        for l in &lengths {
            b.push(b.last().unwrap() + l);
        }
        let part = ShotPartition::new(b).unwrap();
        let budget = rng.gen_range(0.05..=1.0);
        let mask = select_summary(
            &ShotScores {
                scores: scores.clone(),
                lengths: lengths.clone(),
            },
            &part,
            budget,
        )
        .unwrap();
        let capacity = budget_capacity(part.len(), budget);
        let chosen: Vec<bool> = part.shots().map(|r| mask.selected[r.start]).collect();
        let value: f64 = (0..m).filter(|&i| chosen[i]).map(|i| scores[i] * lengths[i] as f64).sum();
        let (best, _) = brute_knapsack(&scores, &lengths, capacity);
        if (value - best).abs() > 1e-12 * best.max(1.0) {
            wrong += 1;
        }
        if mask.count() > capacity {
            over += 1;
        }
        if !mask.is_aligned_to(&part) {
            misaligned += 1;
        }
    }
    outcome(
        wrong + over + misaligned == 0,
        format!("200 instances up to 12 shots; {wrong} suboptimal, {over} over budget, {misaligned} not shot-aligned"),
    )
}

fn metric_oracles() -> Outcome {
    let mask = |n: usize, set: &BTreeSet<usize>| -> Vec<bool> { (0..n).map(|i| set.contains(&i)).collect() };
    let pred: BTreeSet<usize> = (0..10).collect();
    let human: BTreeSet<usize> = (5..15).collect();
    let r = prf(&mask(20, &pred), &mask(20, &human), FMeasure::Harmonic).unwrap();
    let hand = (r.precision, r.recall, r.f_measure) == (0.5, 0.5, 0.5);

    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut random_ok = 0;
    for _ in 0..20 {
        let n = rng.gen_range(1..=60);
        let a: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
        let b: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
        let inter = a.intersection(&b).count() as f64;
        let p = if a.is_empty() { 0.0 } else { inter / a.len() as f64 };
        let rc = if b.is_empty() { 0.0 } else { inter / b.len() as f64 };
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        let got = prf(&mask(n, &a), &mask(n, &b), FMeasure::Harmonic).unwrap();
        if (got.precision - p).abs() < 1e-15 && (got.recall - rc).abs() < 1e-15 && (got.f_measure - f).abs() < 1e-15 {
            random_ok += 1;
        }
    }
    let tau = kendall(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().value;
    let rho = spearman(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap().value;
    let tau_ok = (tau - 2.0 / 3.0).abs() < 1e-12;
    let rho_ok = (rho - 0.5).abs() < 1e-12;
    outcome(
        hand && random_ok == 20 && tau_ok && rho_ok,
        format!(
            "hand case {}; {random_ok}/20 random overlaps; tau = {tau:.15}; rho = {rho:.15}",
            if hand { "(0.5, 0.5, 0.5)" } else { "wrong" }
        ),
    )
}

fn null_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let trials = 1000;
    let (mut tau, mut rho, mut abs_tau, mut abs_rho) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..trials {
        let pred: Vec<f64> = (0..200).map(|_| rng.gen()).collect();
        let ann: Vec<f64> = (0..200).map(|_| rng.gen()).collect();
        let t = kendall(&pred, &ann).unwrap().value;
        let r = spearman(&pred, &ann).unwrap().value;
        tau += t;
        rho += r;
        abs_tau += t.abs();
        abs_rho += r.abs();
    }
    let k = trials as f64;
    let (tau, rho) = (tau / k, rho / k);
    outcome(
        tau.abs() < 0.01 && rho.abs() < 0.01,
        format!(
            "n = 200, 1000 trials; mean tau {tau:+.4}, mean rho {rho:+.4} (limit 0.01); per-trial mean |tau| {:.4}, |rho| {:.4} for reference",
            abs_tau / k,
            abs_rho / k
        ),
    )
}

/// Trace, checkpoint and evaluation bytes for one split of a small run.
fn pipeline_bytes(dir: &std::path::Path) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let cfg = SyntheticConfig {
        seed: 11,
        ..SyntheticConfig::default()
    };
    let manifest = write_dataset(dir, &cfg).unwrap();
    let ds = load_dataset_with_root(&manifest, None).unwrap();
    let plans = make_splits(&ds.by_dataset(), "beta", Organization::Canonical, 3).unwrap();
    let exp = Experiment::new(
        ModelVariant::Full,
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 3,
            hidden_dim: 4,
            seed: 5,
            ..TrainConfig::default()
        },
    );
    let (params, trace) = train_split(&ds, &plans[0], &exp).unwrap();
    let rows = evaluate_split(&ds, &plans[0], &params, &exp).unwrap();
    (
        serde_json::to_vec(&trace).unwrap(),
        avfs::to_bytes(&checkpoint::to_tensors(&params, Some(&trace.config))),
        serde_json::to_vec(&rows).unwrap(),
    )
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline_bytes(a.path());
    let second = pipeline_bytes(b.path());
    let same = [first.0 == second.0, first.1 == second.1, first.2 == second.2];
    outcome(
        same.iter().all(|&s| s),
        format!(
            "two runs from the same seeds: trace {}, checkpoint {}, evaluation {}",
            verdict(same[0]),
            verdict(same[1]),
            verdict(same[2])
        ),
    )
}

fn verdict(same: bool) -> &'static str {
    if same {
        "identical"
    } else {
        "DIFFERENT"
    }
}

/// Soft: reported, never fails the suite.
fn ablation_ordering() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig {
        seed: 21,
        ..SyntheticConfig::default()
    };
    let manifest = write_dataset(dir.path(), &cfg).unwrap();
    let ds = load_dataset_with_root(&manifest, None).unwrap();
    let plans = make_splits(&ds.by_dataset(), "beta", Organization::Canonical, 1).unwrap();
    let variants = [
        ModelVariant::Full,
        ModelVariant::TwoStreamOnly,
        ModelVariant::AudioOnly,
        ModelVariant::VisualOnly,
    ];
    let mut mean_f = Vec::new();
    for v in variants {
        let exp = Experiment::new(
            v,
            TrainConfig {
                learning_rate: 1e-3,
                decay_step: 20,
                decay_rate: 0.5,
                epochs: 40,
                hidden_dim: 8,
                seed: 9,
                ..TrainConfig::default()
            },
        );
        let mut total = 0.0;
        for plan in &plans {
            let (params, _) = train_split(&ds, plan, &exp).unwrap();
            let rows = evaluate_split(&ds, plan, &params, &exp).unwrap();
            total += rows.last().unwrap().f_measure;
        }
        mean_f.push(total / plans.len() as f64);
    }
    let ordered = mean_f[0] >= mean_f[1] && mean_f[1] >= mean_f[2].max(mean_f[3]);
    let table = variants
        .iter()
        .zip(&mean_f)
        .map(|(v, f)| format!("{} {f:.3}", v.table_label()))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        passed: true,
        detail: if ordered {
            format!("mean F over 5 splits: {table}; ordering holds")
        } else {
            format!("WARNING ordering violated (reported only): {table}")
        },
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient-correctness", gradient_correctness),
        ("attention-invariants", attention_invariants),
        ("fusion-gate-convexity", gate_convexity),
        ("overfit", overfit),
        ("kts-oracle", kts_oracle),
        ("knapsack-oracle", knapsack_oracle),
        ("metric-oracles", metric_oracles),
        ("random-null-check", null_check),
        ("determinism", determinism),
        ("ablation-ordering (soft)", ablation_ordering),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        if !o.passed {
            failures += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
