//! Training-cost and accuracy comparison between feature-selection modes.

use serde::{Deserialize, Serialize};

use crate::cascade::{train_cascade, Cascade, TrainConfig, TrainMode};
use crate::detect::{detect, group_detections, DEFAULT_MIN_NEIGHBORS, DEFAULT_SCALE_FACTOR, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::eval::{roc_points, tpr_at, GroundTruthBox, ImageDetection, RocPoint, PASCAL_IOU};
use crate::ga::GaConfig;
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub scale_factor: f64,
    pub step: usize,
    pub min_neighbors: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            scale_factor: DEFAULT_SCALE_FACTOR,
            step: DEFAULT_STEP,
            min_neighbors: DEFAULT_MIN_NEIGHBORS,
        }
    }
}

/// Runs detection and grouping over a set of named images.
pub fn detect_all(cascade: &Cascade, images: &[(String, GrayImage)], params: &DetectParams) -> Vec<ImageDetection> {
    images
        .iter()
        .flat_map(|(name, img)| {
            let raw = detect(img, cascade, params.scale_factor, params.step);
            group_detections(&raw, params.min_neighbors)
                .into_iter()
                .map(|d| ImageDetection {
                    image: name.clone(),
                    bbox: d.bbox,
                    score: d.score,
                })
        })
        .collect()
}

/// ROC curve of a cascade on an annotated image set.
pub fn evaluate_cascade(
    cascade: &Cascade,
    images: &[(String, GrayImage)],
    truth: &[GroundTruthBox],
    params: &DetectParams,
) -> Vec<RocPoint> {
    roc_points(&detect_all(cascade, images, params), truth, PASCAL_IOU)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub name: String,
    pub mode: TrainMode,
}

impl BenchCell {
    pub fn baseline() -> Self {
        Self {
            name: "baseline".into(),
            mode: TrainMode::Baseline,
        }
    }

    pub fn ga(iterations: usize, base: &GaConfig) -> Self {
        Self {
            name: format!("ga-{iterations}"),
            mode: TrainMode::Ga(GaConfig {
                max_iterations: iterations,
                ..base.clone()
            }),
        }
    }
}

/// Baseline, then GA with 20 and 50 generations.
pub fn standard_cells(base: &GaConfig) -> Vec<BenchCell> {
    vec![BenchCell::baseline(), BenchCell::ga(20, base), BenchCell::ga(50, base)]
}

/// GA cells differing only in population size.
pub fn population_sweep(sizes: &[usize], base: &GaConfig) -> Vec<BenchCell> {
    sizes
        .iter()
        .map(|&p| BenchCell {
            name: format!("ga-pop-{p}"),
            mode: TrainMode::Ga(GaConfig {
                population_size: p,
                ..base.clone()
            }),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Shared training settings; `mode` and `rng_seed` are set per cell.
    pub train: TrainConfig,
    /// The first cell is the reference for ratios.
    pub cells: Vec<BenchCell>,
    pub seeds: Vec<u64>,
    pub detect: DetectParams,
    /// False-positive budget for the accuracy column. Defaults to half the
    /// reference cell's largest false-positive count for the same seed.
    pub reference_fp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub cell: String,
    pub seed: u64,
    pub seconds: f64,
    pub features_evaluated: u64,
    pub stages: usize,
    pub stopped_early: bool,
    /// Reference seconds over this cell's seconds.
    pub speedup: f64,
    /// This cell's seconds over the reference seconds.
    pub time_ratio: f64,
    pub feature_ratio: f64,
    pub reference_fp: f64,
    pub tpr_at_reference: f64,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

/// Trains every cell under every seed on shared data and evaluates it on
/// the annotated test images.
pub fn run_bench(
    positives: &[GrayImage],
    negatives: &[GrayImage],
    test_images: &[(String, GrayImage)],
    truth: &[GroundTruthBox],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    if cfg.cells.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("bench needs at least one cell and one seed".into()));
    }
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let mut reference: Option<(f64, u64, f64)> = None;
        for cell in &cfg.cells {
            let train = TrainConfig {
                mode: cell.mode.clone(),
                rng_seed: seed,
                ..cfg.train.clone()
            };
            let (cascade, report) = train_cascade(positives, negatives, &train)?;
            let seconds = report.total_seconds;
            let features = report.features_evaluated();
            let roc = evaluate_cascade(&cascade, test_images, truth, &cfg.detect);
            let (ref_seconds, ref_features, ref_fp) = *reference.get_or_insert_with(|| {
                let max_fp = roc.iter().map(|p| p.false_positives).max().unwrap_or(0);
                (seconds, features, cfg.reference_fp.unwrap_or(max_fp as f64 / 2.0))
            });
            log::info!("bench {} seed {seed}: {seconds:.2}s, {features} fits", cell.name);
            rows.push(BenchRow {
                cell: cell.name.clone(),
                seed,
                seconds,
                features_evaluated: features,
                stages: cascade.stages().len(),
                stopped_early: report.stopped_early.is_some(),
                speedup: ref_seconds / seconds,
                time_ratio: seconds / ref_seconds,
                feature_ratio: features as f64 / ref_features as f64,
                reference_fp: ref_fp,
                tpr_at_reference: tpr_at(&roc, ref_fp),
                roc,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{CorpusSpec, DeskCorpus};

    #[test]
    fn bench_rows_cover_every_cell_and_seed() {
        let corpus = DeskCorpus::generate(
            &CorpusSpec {
                window: 10,
                positives: 60,
                negative_images: 8,
                negative_size: 40,
                test_images: 3,
                test_size: 48,
                faces_per_test_image: 1,
            },
            5,
        );
        let ga = GaConfig {
            population_size: 40,
            ..GaConfig::default()
        };
        let cfg = BenchConfig {
            train: TrainConfig {
                window_w: 10,
                window_h: 10,
                num_stages: 2,
                pos_per_stage: 40,
                neg_per_stage: 40,
                ..TrainConfig::default()
            },
            cells: vec![BenchCell::baseline(), BenchCell::ga(2, &ga)],
            seeds: vec![1, 2],
            detect: DetectParams::default(),
            reference_fp: None,
        };
        let rows = run_bench(
            &corpus.positives,
            &corpus.negatives,
            &corpus.test_images,
            &corpus.test_truth,
            &cfg,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].cell, "baseline");
        assert_eq!(rows[0].speedup, 1.0);
        assert_eq!(rows[0].feature_ratio, 1.0);
        for pair in rows.chunks(2) {
            assert_eq!(pair[0].seed, pair[1].seed);
            assert_eq!(pair[0].reference_fp, pair[1].reference_fp);
            assert!(pair[1].features_evaluated < pair[0].features_evaluated);
        }
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let cfg = BenchConfig {
            train: TrainConfig::default(),
            cells: Vec::new(),
            seeds: vec![1],
            detect: DetectParams::default(),
            reference_fp: None,
        };
        assert!(run_bench(&[], &[], &[], &[], &cfg).is_err());
    }

    #[test]
    fn cell_builders() {
        let cells = standard_cells(&GaConfig::default());
        let names: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["baseline", "ga-20", "ga-50"]);
        let sweep = population_sweep(&[100, 300], &GaConfig::default());
        assert!(matches!(&sweep[1].mode, TrainMode::Ga(g) if g.population_size == 300));
    }
}
