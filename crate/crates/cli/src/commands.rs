//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use gadaboost::bench::{detect_all, population_sweep, run_bench, BenchCell, BenchConfig, BenchRow};
use gadaboost::cascade::{train_cascade, Cascade, TrainReport};
use gadaboost::eval::{aggregate_runs, roc_points, tpr_at, ImageDetection, PASCAL_IOU};
use gadaboost::haar::enumerate_features;
use gadaboost::image::GrayImage;
use gadaboost::synth::{CorpusSpec, DeskCorpus};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{self, AnnotationRecord, DetectionRow, RocRow};
use crate::{ScanArgs, UsageError};

const DETECTION_HEADERS: [&str; 6] = ["image", "x", "y", "w", "h", "score"];
const ROC_HEADERS: [&str; 3] = ["threshold", "false_positives", "true_positive_rate"];

fn set_threads(flag: Option<usize>, config: Option<usize>) -> Result<()> {
    let Some(n) = flag.or(config) else {
        return Ok(());
    };
    if n == 0 {
        return Err(UsageError("--threads must be >= 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure the thread pool")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load_pool(dir: &Path, what: &str) -> Result<Vec<GrayImage>> {
    let (images, _) = data::load_dir(dir)?;
    if images.is_empty() {
        bail!("no readable {what} images in {}", dir.display());
    }
    Ok(images.into_iter().map(|(_, img)| img).collect())
}

fn load_model(path: &Path) -> Result<Cascade> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Cascade::from_model_str(&text).with_context(|| format!("in {}", path.display()))
}

#[derive(Serialize)]
struct StageRow {
    stage: usize,
    stumps: usize,
    hit_rate: f64,
    false_alarm: f64,
    goal_met: bool,
    candidates: usize,
    features_evaluated: u64,
    harvest_attempts: usize,
    harvest_acceptance: f64,
    seconds: f64,
    ga_seconds: f64,
}

#[derive(Serialize)]
struct TraceRow {
    stage: usize,
    generation: usize,
    best_fitness: f64,
    mean_fitness: f64,
    dedup_drops: usize,
    refill_count: usize,
}

fn write_train_report(report: &TrainReport, out: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    fs::write(out.join("report.json"), json + "\n")?;
    let stages: Vec<StageRow> = report
        .stages
        .iter()
        .map(|s| StageRow {
            stage: s.stage,
            stumps: s.stumps,
            hit_rate: s.hit_rate,
            false_alarm: s.false_alarm,
            goal_met: s.goal_met,
            candidates: s.candidates,
            features_evaluated: s.features_evaluated,
            harvest_attempts: s.harvest_attempts,
            harvest_acceptance: s.harvest_acceptance,
            seconds: s.seconds,
            ga_seconds: s.ga_seconds,
        })
        .collect();
    data::write_csv(
        &out.join("stages.csv"),
        &[
            "stage",
            "stumps",
            "hit_rate",
            "false_alarm",
            "goal_met",
            "candidates",
            "features_evaluated",
            "harvest_attempts",
            "harvest_acceptance",
            "seconds",
            "ga_seconds",
        ],
        &stages,
    )?;
    let trace: Vec<TraceRow> = report
        .stages
        .iter()
        .flat_map(|s| {
            s.ga_trace.iter().map(move |g| TraceRow {
                stage: s.stage,
                generation: g.generation,
                best_fitness: g.best_fitness,
                mean_fitness: g.mean_fitness,
                dedup_drops: g.dedup_drops,
                refill_count: g.refill_count,
            })
        })
        .collect();
    data::write_csv(
        &out.join("ga_trace.csv"),
        &["stage", "generation", "best_fitness", "mean_fitness", "dedup_drops", "refill_count"],
        &trace,
    )
}

pub fn train(config: &Path, seed: Option<u64>, threads: Option<usize>, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config, seed)?;
    set_threads(threads, cfg.threads)?;
    let positives = load_pool(cfg.require(&cfg.positives, "positives")?, "positive")?;
    let negatives = load_pool(cfg.require(&cfg.negatives, "negatives")?, "negative")?;
    let (cascade, report) = train_cascade(&positives, &negatives, &cfg.train_config())?;
    create_dir(out)?;
    fs::write(out.join("model.txt"), cascade.to_model_string())?;
    write_train_report(&report, out)?;
    let stumps: usize = report.stages.iter().map(|s| s.stumps).sum();
    println!(
        "{}: {} stages, {stumps} stumps, {} features evaluated, {:.2}s",
        report.mode,
        report.stages.len(),
        report.features_evaluated(),
        report.total_seconds
    );
    if let Some(reason) = &report.stopped_early {
        println!("stopped early: {reason}");
    }
    Ok(())
}

pub fn detect(model: &Path, images: &Path, out: &Path, scan: &ScanArgs, threads: Option<usize>) -> Result<()> {
    let cfg = match &scan.config {
        Some(path) => RunConfig::load(path, None)?,
        None => RunConfig::default(),
    };
    let mut params = cfg.detect_params();
    params.scale_factor = scan.scale_factor.unwrap_or(params.scale_factor);
    params.step = scan.step.unwrap_or(params.step);
    params.min_neighbors = scan.min_neighbors.unwrap_or(params.min_neighbors);
    if params.scale_factor <= 1.0 || params.step == 0 {
        return Err(UsageError("scale factor must exceed 1 and step must be >= 1".into()).into());
    }
    set_threads(threads, cfg.threads)?;
    let cascade = load_model(model)?;
    let (loaded, skipped) = data::load_dir(images)?;
    let dets = detect_all(&cascade, &loaded, &params);
    let rows: Vec<DetectionRow> = dets.iter().map(DetectionRow::from).collect();
    data::write_csv(out, &DETECTION_HEADERS, &rows)?;
    println!("{} detections in {} images ({skipped} skipped)", rows.len(), loaded.len());
    Ok(())
}

pub fn eval(detections: &Path, annotations: &Path, out: &Path, fp: Option<f64>) -> Result<()> {
    let dets: Vec<ImageDetection> = data::read_csv::<DetectionRow>(detections)?
        .iter()
        .map(DetectionRow::detection)
        .collect();
    let truth = data::ground_truth(&data::read_annotations(annotations)?);
    let curve = roc_points(&dets, &truth, PASCAL_IOU);
    let rows: Vec<RocRow> = curve.iter().map(RocRow::from).collect();
    data::write_csv(out, &ROC_HEADERS, &rows)?;
    let last = curve.last();
    println!(
        "{} detections, {} ground truths: tpr {:.4} at {} false positives",
        dets.len(),
        truth.len(),
        last.map_or(0.0, |p| p.true_positive_rate),
        last.map_or(0, |p| p.false_positives)
    );
    if let Some(fp) = fp {
        println!("tpr at fp {fp}: {:.4}", tpr_at(&curve, fp));
    }
    Ok(())
}

/// Checks that every annotated image was loaded and every box lies inside it.
fn check_annotations(records: &[AnnotationRecord], images: &[(String, GrayImage)]) -> Result<()> {
    let sizes: BTreeMap<&str, (usize, usize)> = images
        .iter()
        .map(|(n, img)| (n.as_str(), (img.width(), img.height())))
        .collect();
    for r in records {
        let Some(&(w, h)) = sizes.get(r.path.as_str()) else {
            bail!("annotated image {} is missing from the test set", r.path);
        };
        if let Some(b) = r.boxes.iter().find(|b| b.x + b.w > w as f64 || b.y + b.h > h as f64) {
            bail!("box {b:?} lies outside {} ({w}x{h})", r.path);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EnvelopeRow {
    fp: f64,
    min_tpr: f64,
    mean_tpr: f64,
    max_tpr: f64,
}

fn bench_cells(cfg: &RunConfig) -> Vec<BenchCell> {
    let ga = cfg.ga_config();
    let mut cells = vec![BenchCell::baseline()];
    cells.extend(cfg.bench_iterations.iter().map(|&i| BenchCell::ga(i, &ga)));
    cells.extend(population_sweep(&cfg.bench_populations, &ga));
    cells
}

fn write_bench(rows: &[BenchRow], out: &Path) -> Result<()> {
    data::write_csv(
        &out.join("bench.csv"),
        &[
            "cell",
            "seed",
            "seconds",
            "features_evaluated",
            "stages",
            "stopped_early",
            "speedup",
            "time_ratio",
            "feature_ratio",
            "reference_fp",
            "tpr_at_reference",
        ],
        rows,
    )?;
    let mut by_cell: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for r in rows {
        let roc: Vec<RocRow> = r.roc.iter().map(RocRow::from).collect();
        data::write_csv(&out.join(format!("roc_{}_seed{}.csv", r.cell, r.seed)), &ROC_HEADERS, &roc)?;
        by_cell.entry(&r.cell).or_default().push(r.roc.clone());
    }
    let max_fp = rows
        .iter()
        .flat_map(|r| r.roc.iter().map(|p| p.false_positives))
        .max()
        .unwrap_or(0);
    let stride = (max_fp / 50).max(1);
    let grid: Vec<f64> = (0..=max_fp).step_by(stride).map(|f| f as f64).collect();
    for (cell, runs) in by_cell {
        let env: Vec<EnvelopeRow> = aggregate_runs(&runs, &grid)?
            .into_iter()
            .map(|e| EnvelopeRow { fp: e.fp, min_tpr: e.min_tpr, mean_tpr: e.mean_tpr, max_tpr: e.max_tpr })
            .collect();
        data::write_csv(&out.join(format!("aggregate_{cell}.csv")), &["fp", "min_tpr", "mean_tpr", "max_tpr"], &env)?;
    }
    Ok(())
}

pub fn bench(config: &Path, seed: Option<u64>, threads: Option<usize>, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config, None)?;
    set_threads(threads, cfg.threads)?;
    let seeds = match seed {
        Some(s) => vec![s],
        None if cfg.bench_seeds.is_empty() => vec![cfg.seed],
        None => cfg.bench_seeds.clone(),
    };
    let positives = load_pool(cfg.require(&cfg.positives, "positives")?, "positive")?;
    let negatives = load_pool(cfg.require(&cfg.negatives, "negatives")?, "negative")?;
    let (test_images, _) = data::load_dir(cfg.require(&cfg.test_images, "test_images")?)?;
    let records = data::read_annotations(cfg.require(&cfg.annotations, "annotations")?)?;
    check_annotations(&records, &test_images)?;
    let bench_cfg = BenchConfig {
        train: cfg.train_config(),
        cells: bench_cells(&cfg),
        seeds,
        detect: cfg.detect_params(),
        reference_fp: cfg.bench_reference_fp,
    };
    let rows = run_bench(&positives, &negatives, &test_images, &data::ground_truth(&records), &bench_cfg)?;
    create_dir(out)?;
    write_bench(&rows, out)?;
    println!("{:<14} {:>6} {:>9} {:>12} {:>8} {:>8} {:>8}", "cell", "seed", "seconds", "features", "speedup", "fp", "tpr");
    for r in &rows {
        println!(
            "{:<14} {:>6} {:>9.2} {:>12} {:>8.2} {:>8.1} {:>8.3}",
            r.cell, r.seed, r.seconds, r.features_evaluated, r.speedup, r.reference_fp, r.tpr_at_reference
        );
    }
    Ok(())
}

pub fn enumerate(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(UsageError("window dimensions must be positive".into()).into());
    }
    println!("{}", enumerate_features(width, height).len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 19)]
    window: usize,
    #[arg(long, default_value_t = 400)]
    positives: usize,
    #[arg(long, default_value_t = 60)]
    negatives: usize,
    #[arg(long, default_value_t = 20)]
    test_images: usize,
    /// Side of negative and test images.
    #[arg(long, default_value_t = 96)]
    size: usize,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if args.window < 2 || args.positives == 0 || args.negatives == 0 || args.size < args.window {
        return Err(UsageError("need window >= 2, size >= window and non-empty pools".into()).into());
    }
    let spec = CorpusSpec {
        window: args.window,
        positives: args.positives,
        negative_images: args.negatives,
        negative_size: args.size,
        test_images: args.test_images,
        test_size: args.size,
        ..CorpusSpec::default()
    };
    let corpus = DeskCorpus::generate(&spec, args.seed);
    for dir in ["positives", "negatives", "test"] {
        create_dir(&args.out.join(dir))?;
    }
    for (i, img) in corpus.positives.iter().enumerate() {
        data::save_pgm(img, &args.out.join(format!("positives/pos_{i:05}.pgm")))?;
    }
    for (i, img) in corpus.negatives.iter().enumerate() {
        data::save_pgm(img, &args.out.join(format!("negatives/neg_{i:04}.pgm")))?;
    }
    let mut records = Vec::new();
    for (name, img) in &corpus.test_images {
        data::save_pgm(img, &args.out.join("test").join(name))?;
        let boxes = corpus.test_truth.iter().filter(|g| &g.image == name).map(|g| g.bbox).collect();
        records.push(AnnotationRecord { path: name.clone(), boxes });
    }
    fs::write(args.out.join("test/annotations.txt"), data::format_annotations(&records))?;
    let per_stage = (args.positives / 2).clamp(1, 200);
    // Small windows run out of unused features across stages.
    let scope = if enumerate_features(args.window, args.window).len() < 50_000 {
        "stage"
    } else {
        "cascade"
    };
    let config = format!(
        "positives = \"positives\"\nnegatives = \"negatives\"\ntest_images = \"test\"\nannotations = \"test/annotations.txt\"\n\
         seed = {}\nwindow_w = {w}\nwindow_h = {w}\nnum_stages = 5\npos_per_stage = {per_stage}\nneg_per_stage = {per_stage}\n\
         mode = \"ga\"\npopulation_size = 500\nmax_iterations = 10\nregistry_scope = \"{scope}\"\nbench_seeds = [1, 2, 3]\nbench_iterations = [10]\n",
        args.seed,
        w = args.window,
    );
    fs::write(args.out.join("train.toml"), config)?;
    println!(
        "{} positives, {} negatives, {} test images with {} faces in {}",
        corpus.positives.len(),
        corpus.negatives.len(),
        corpus.test_images.len(),
        corpus.test_truth.len(),
        args.out.display()
    );
    Ok(())
}

pub fn convert_eyes(input: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
    let records = data::convert_eye_file(&text).with_context(|| format!("in {}", input.display()))?;
    fs::write(out, data::format_annotations(&records)).with_context(|| format!("cannot write {}", out.display()))?;
    println!("{} images, {} boxes", records.len(), records.iter().map(|r| r.boxes.len()).sum::<usize>());
    Ok(())
}
