use std::path::{Path, PathBuf};

use avrn::checkpoint::{self, CheckpointMeta};
use avrn::data::{load_dataset, make_splits, Dataset, SplitPlan};
use avrn::evaluation::{mean_record, to_csv, ResultRecord};
use avrn::gradcheck::{check_variant, GradCheckOptions, VariantCheck, VariantCheckSetup};
use avrn::model::{forward, ModelVariant};
use avrn::pipeline::{evaluate_one, evaluate_split, train_split, Experiment};
use avrn::synthetic::{write_dataset, SyntheticConfig};
use avrn::train::TrainTrace;
use avrn::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub const RUN_FILE: &str = "run.json";
pub const SPLITS_FILE: &str = "splits.json";

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn split_dir(root: &Path, split_index: usize) -> PathBuf {
    root.join(format!("split-{split_index}"))
}

/// The named dataset, or the one the manifest lists first.
fn target_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<String> {
    match &cfg.dataset {
        Some(name) if ds.videos.iter().any(|v| &v.entry.dataset == name) => Ok(name.clone()),
        Some(name) => Err(Error::Config(format!("dataset {name:?} is not in the manifest"))),
        None => Ok(ds.videos[0].entry.dataset.clone()),
    }
}

/// Rebuilds the experiment around a checkpoint's own model settings.
fn experiment_for(cfg: &RunConfig, meta: &CheckpointMeta) -> Experiment {
    let mut exp = cfg.experiment();
    exp.variant = meta.model.variant;
    exp.elementwise_gate = meta.model.elementwise_gate;
    exp.scaled_attention = meta.model.scaled_attention;
    exp.train.hidden_dim = meta.model.hidden_dim;
    exp
}

/// Trains one model per split and writes checkpoints, traces, the split
/// plans and the resolved configuration under `cfg.out`.
pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg.manifest()?)?;
    let mut cfg = cfg.clone();
    cfg.dataset = Some(target_dataset(&cfg, &ds)?);
    let plans = make_splits(&ds.by_dataset(), cfg.dataset.as_deref().unwrap(), cfg.organization, cfg.seed)?;
    let exp = cfg.experiment();

    // splits are independent; each writes only to its own directory
    let outcomes: Vec<Result<TrainTrace>> = std::thread::scope(|s| {
        let handles: Vec<_> = plans
            .iter()
            .map(|plan| {
                let (ds, exp, out) = (&ds, &exp, &cfg.out);
                s.spawn(move || {
                    let (params, trace) = train_split(ds, plan, exp)?;
                    let dir = split_dir(out, plan.split_index);
                    std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
                    checkpoint::save(&dir.join("checkpoint.avfs"), &params, Some(&trace.config))?;
                    write_json(&dir.join("trace.json"), &trace)?;
                    Ok(trace)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    for (plan, outcome) in plans.iter().zip(outcomes) {
        let trace = outcome?;
        println!(
            "split {}: {} epochs, final loss {:.6}",
            plan.split_index,
            trace.epochs.len(),
            trace.final_loss().unwrap_or(f64::NAN)
        );
    }
    write_json(&cfg.out.join(SPLITS_FILE), &plans)?;
    write_json(&cfg.out.join(RUN_FILE), &cfg)
}

#[derive(Serialize)]
struct Results<'a> {
    rows: &'a [ResultRecord],
    average: &'a ResultRecord,
}

/// Evaluates the checkpoints in `checkpoints` on their splits' test videos.
/// Writes `results.json` and `results.csv` to `cfg.out` and returns the
/// five-split average row.
pub fn evaluate(cfg: &RunConfig, checkpoints: &Path) -> Result<ResultRecord> {
    let plans: Vec<SplitPlan> = read_json(&checkpoints.join(SPLITS_FILE))?;
    let ds = load_dataset(cfg.manifest()?)?;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    let mut variant = cfg.variant;
    for plan in &plans {
        let (params, meta) = checkpoint::load(&split_dir(checkpoints, plan.split_index).join("checkpoint.avfs"))?;
        let exp = experiment_for(cfg, &meta);
        variant = exp.variant;
        let split_rows = evaluate_split(&ds, plan, &params, &exp)?;
        means.push(split_rows.last().expect("split mean row").clone());
        rows.extend(split_rows);
    }
    let average = mean_record(&means, "average", 0, variant.name());
    write_json(
        &cfg.out.join("results.json"),
        &Results {
            rows: &rows,
            average: &average,
        },
    )?;
    let mut all = rows;
    all.push(average.clone());
    write_file(&cfg.out.join("results.csv"), to_csv(&all).as_bytes())?;
    println!("{}", ResultRecord::CSV_HEADER);
    println!("{}", average.csv_row());
    Ok(average)
}

/// Trains and evaluates each variant in its own subdirectory, then writes
/// one averaged row per variant.
pub fn ablate(cfg: &RunConfig, variants: &[ModelVariant]) -> Result<()> {
    let mut rows = Vec::new();
    for &variant in variants {
        let mut v = cfg.clone();
        v.variant = variant;
        v.out = cfg.out.join(variant.name());
        train(&v)?;
        rows.push(evaluate(&v, &v.out)?);
    }
    write_json(&cfg.out.join("ablation.json"), &rows)?;
    write_file(&cfg.out.join("ablation.csv"), to_csv(&rows).as_bytes())
}

#[derive(Serialize)]
struct Summary<'a> {
    video_id: &'a str,
    variant: ModelVariant,
    budget: f64,
    stride: usize,
    steps: usize,
    selected_steps: usize,
    shots: &'a [usize],
    mask: &'a [bool],
    f_measure: f64,
    tau: f64,
    rho: f64,
}

/// Writes the predicted summary of one video and its score curves.
pub fn summarize(cfg: &RunConfig, checkpoint_path: &Path, video_id: &str) -> Result<()> {
    let ds = load_dataset(cfg.manifest()?)?;
    let video = ds.get(video_id).ok_or_else(|| Error::Data {
        video: video_id.to_string(),
        message: "not in the manifest".into(),
    })?;
    let (params, meta) = checkpoint::load(checkpoint_path)?;
    let exp = experiment_for(cfg, &meta);
    let scores = forward(&params, &video.features)?.scores;
    let (part, ev) = evaluate_one(&ds, video, &scores, &exp)?;

    let summary = Summary {
        video_id,
        variant: exp.variant,
        budget: exp.budget,
        stride: video.entry.stride,
        steps: scores.len(),
        selected_steps: ev.summary.count(),
        shots: part.boundaries(),
        mask: &ev.summary.selected,
        f_measure: ev.overlap.f_measure,
        tau: ev.rank.kendall_tau,
        rho: ev.rank.spearman_rho,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    let mut csv = String::from("t,p,g\n");
    for (t, (p, g)) in scores.iter().zip(&video.target).enumerate() {
        csv.push_str(&format!("{t},{p:.6},{g:.6}\n"));
    }
    write_file(&cfg.out.join("curve.csv"), csv.as_bytes())?;
    println!(
        "{video_id}: {} of {} steps in {} shots selected",
        summary.selected_steps,
        summary.steps,
        part.shot_count()
    );
    Ok(())
}

/// Runs the finite-difference check on every variant; returns the checks
/// so the caller can decide the exit status.
pub fn gradcheck(seed: u64, corrupt: bool, out: Option<&Path>) -> Result<Vec<VariantCheck>> {
    let setup = VariantCheckSetup {
        seed,
        corrupt,
        ..VariantCheckSetup::default()
    };
    let opts = GradCheckOptions::default();
    let mut checks = Vec::new();
    for variant in ModelVariant::ALL {
        let c = check_variant(variant, &setup, &opts)?;
        let groups: Vec<String> = c.groups.iter().map(|(g, e)| format!("{g}={e:.2e}")).collect();
        println!(
            "{} {:<16} max {:.2e}  {}",
            if c.passed { "PASS" } else { "FAIL" },
            variant.name(),
            c.max_relative_error,
            groups.join(" ")
        );
        checks.push(c);
    }
    if let Some(dir) = out {
        write_json(&dir.join("gradcheck.json"), &checks)?;
    }
    Ok(checks)
}

pub fn synth(out: &Path, seed: u64, write_shots: bool) -> Result<PathBuf> {
    let cfg = SyntheticConfig {
        seed,
        write_shots,
        ..SyntheticConfig::default()
    };
    let path = write_dataset(out, &cfg)?;
    println!("{}", path.display());
    Ok(path)
}
