//! Overlap-criterion matching, ROC sweeps and multi-run aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default overlap a detection needs to count as a hit.
pub const PASCAL_IOU: f64 = 0.4;

/// Axis-aligned box, `(x, y)` top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Intersection over union. Disjoint boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return Err(Error::ZeroAreaBox);
    }
    Ok(iou_unchecked(a, b))
}

#[inline]
pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

/// A detection with its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

/// Ground-truth box tied to an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image: String,
    pub bbox: BBox,
}

/// Scored detection tied to an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetection {
    pub image: String,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    /// `(detection index, ground-truth index)` pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Deterministic processing order: score descending, then geometry.
fn score_order(dets: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .total_cmp(&da.score)
            .then(da.bbox.x.total_cmp(&db.bbox.x))
            .then(da.bbox.y.total_cmp(&db.bbox.y))
            .then(da.bbox.w.total_cmp(&db.bbox.w))
            .then(da.bbox.h.total_cmp(&db.bbox.h))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching of one image's detections, highest score first.
pub fn match_detections(dets: &[ScoredBox], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for d in score_order(dets) {
        match best_unmatched(&dets[d].bbox, gts, &taken, iou_threshold) {
            Some(g) => {
                taken[g] = true;
                result.tp += 1;
                result.pairs.push((d, g));
            }
            None => result.fp += 1,
        }
    }
    result
}

fn best_unmatched(det: &BBox, gts: &[BBox], taken: &[bool], iou_threshold: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, gt) in gts.iter().enumerate() {
        if taken[g] {
            continue;
        }
        let o = iou_unchecked(det, gt);
        if o > iou_threshold && best.is_none_or(|(_, bo)| o > bo) {
            best = Some((g, o));
        }
    }
    best.map(|(g, _)| g)
}

/// One operating point of a detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub score_threshold: f64,
    pub false_positives: usize,
    pub true_positive_rate: f64,
}

/// Sweeps the score threshold from the top down and reports one point per
/// distinct corpus-wide false-positive count (the lowest threshold reaching it).
///
/// Greedy matching in score order never revisits an earlier decision, so a
/// single pass over the globally sorted detections reproduces re-matching
/// from scratch at every threshold.
pub fn roc_points(dets: &[ImageDetection], gts: &[GroundTruthBox], iou_threshold: f64) -> Vec<RocPoint> {
    if gts.is_empty() {
        return Vec::new();
    }
    let mut gt_by_image: BTreeMap<&str, Vec<BBox>> = BTreeMap::new();
    for g in gts {
        gt_by_image.entry(&g.image).or_default().push(g.bbox);
    }
    let mut taken: BTreeMap<&str, Vec<bool>> = gt_by_image
        .iter()
        .map(|(k, v)| (*k, vec![false; v.len()]))
        .collect();

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .total_cmp(&da.score)
            .then(da.image.cmp(&db.image))
            .then(da.bbox.x.total_cmp(&db.bbox.x))
            .then(da.bbox.y.total_cmp(&db.bbox.y))
            .then(da.bbox.w.total_cmp(&db.bbox.w))
            .then(da.bbox.h.total_cmp(&db.bbox.h))
    });

    let total = gts.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points: Vec<RocPoint> = Vec::new();
    for (rank, &d) in order.iter().enumerate() {
        let det = &dets[d];
        let hit = match (gt_by_image.get(det.image.as_str()), taken.get_mut(det.image.as_str())) {
            (Some(boxes), Some(used)) => match best_unmatched(&det.bbox, boxes, used, iou_threshold) {
                Some(g) => {
                    used[g] = true;
                    true
                }
                None => false,
            },
            _ => false,
        };
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_ends = order
            .get(rank + 1)
            .is_none_or(|&next| dets[next].score != det.score);
        if group_ends {
            let point = RocPoint {
                score_threshold: det.score,
                false_positives: fp,
                true_positive_rate: tp as f64 / total,
            };
            match points.last_mut() {
                Some(last) if last.false_positives == fp => *last = point,
                _ => points.push(point),
            }
        }
    }
    points
}

/// Step-interpolated TPR of a curve at a false-positive budget.
pub fn tpr_at(curve: &[RocPoint], fp: f64) -> f64 {
    curve
        .iter()
        .filter(|p| p.false_positives as f64 <= fp)
        .map(|p| p.true_positive_rate)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub fp: f64,
    pub min_tpr: f64,
    pub mean_tpr: f64,
    pub max_tpr: f64,
}

/// Min/mean/max TPR of several runs on a common false-positive grid.
pub fn aggregate_runs(runs: &[Vec<RocPoint>], grid: &[f64]) -> Result<Vec<Envelope>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if runs.is_empty() {
        return Err(Error::InvalidConfig("at least one run is required".into()));
    }
    Ok(grid
        .iter()
        .map(|&fp| {
            let tprs: Vec<f64> = runs.iter().map(|r| tpr_at(r, fp)).collect();
            Envelope {
                fp,
                min_tpr: tprs.iter().copied().fold(f64::INFINITY, f64::min),
                mean_tpr: tprs.iter().sum::<f64>() / tprs.len() as f64,
                max_tpr: tprs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h)
    }

    #[test]
    fn iou_fixtures() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 5.0, 5.0)).unwrap(), 0.0);
        let third = iou(&a, &b(5.0, 0.0, 10.0, 10.0)).unwrap();
        assert_eq!(third, 50.0 / 150.0);
        assert!(third <= PASCAL_IOU);
        assert!(iou(&a, &b(1.0, 1.0, 0.0, 4.0)).is_err());
    }

    #[test]
    fn matching_fixtures() {
        let gt = [b(10.0, 10.0, 20.0, 20.0)];
        assert_eq!(match_detections(&[], &gt, PASCAL_IOU), MatchResult::default());
        let exact = [ScoredBox { bbox: gt[0], score: 1.0 }];
        let m = match_detections(&exact, &gt, PASCAL_IOU);
        assert_eq!((m.tp, m.fp), (1, 0));
        let two = [
            ScoredBox { bbox: b(11.0, 10.0, 20.0, 20.0), score: 0.5 },
            ScoredBox { bbox: gt[0], score: 0.9 },
        ];
        let m = match_detections(&two, &gt, PASCAL_IOU);
        assert_eq!((m.tp, m.fp), (1, 1));
        assert_eq!(m.pairs, vec![(1, 0)]);
    }

    /// Maximum matching size by exhaustive assignment (tiny inputs only).
    fn best_assignment(dets: &[BBox], gts: &[BBox], used: &mut Vec<bool>, i: usize) -> usize {
        if i == dets.len() {
            return 0;
        }
        let mut best = best_assignment(dets, gts, used, i + 1);
        for g in 0..gts.len() {
            if !used[g] && iou_unchecked(&dets[i], &gts[g]) > PASCAL_IOU {
                used[g] = true;
                best = best.max(1 + best_assignment(dets, gts, used, i + 1));
                used[g] = false;
            }
        }
        best
    }

    #[test]
    fn greedy_equals_exhaustive_on_two_detection_fixture() {
        let gts = [b(10.0, 10.0, 20.0, 20.0)];
        let dets = [b(11.0, 10.0, 20.0, 20.0), b(10.0, 10.0, 20.0, 20.0)];
        let opt = best_assignment(&dets, &gts, &mut vec![false; 1], 0);
        let scored: Vec<ScoredBox> = dets.iter().map(|&bbox| ScoredBox { bbox, score: 1.0 }).collect();
        assert_eq!(match_detections(&scored, &gts, PASCAL_IOU).tp, opt);
    }

    fn det(image: &str, bbox: BBox, score: f64) -> ImageDetection {
        ImageDetection { image: image.into(), bbox, score }
    }

    #[test]
    fn perfect_detector_is_a_single_point() {
        let gts = vec![
            GroundTruthBox { image: "a".into(), bbox: b(0.0, 0.0, 10.0, 10.0) },
            GroundTruthBox { image: "b".into(), bbox: b(5.0, 5.0, 10.0, 10.0) },
        ];
        let dets: Vec<ImageDetection> = gts.iter().map(|g| det(&g.image, g.bbox, 1.0)).collect();
        let roc = roc_points(&dets, &gts, PASCAL_IOU);
        assert_eq!(roc, vec![RocPoint { score_threshold: 1.0, false_positives: 0, true_positive_rate: 1.0 }]);
    }

    fn random_corpus(seed: u64, n_det: usize) -> (Vec<ImageDetection>, Vec<GroundTruthBox>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = ["a", "b", "c", "d"];
        let gts: Vec<GroundTruthBox> = (0..12)
            .map(|_| GroundTruthBox {
                image: images[rng.gen_range(0..4)].into(),
                bbox: b(rng.gen_range(0..60) as f64, rng.gen_range(0..60) as f64, 20.0, 20.0),
            })
            .collect();
        let dets = (0..n_det)
            .map(|_| {
                let (x, y) = if rng.gen_bool(0.6) {
                    let g = &gts[rng.gen_range(0..gts.len())];
                    (g.bbox.x + rng.gen_range(-6..=6) as f64, g.bbox.y + rng.gen_range(-6..=6) as f64)
                } else {
                    (rng.gen_range(0..60) as f64, rng.gen_range(0..60) as f64)
                };
                let image = images[rng.gen_range(0..4)];
                // coarse scores so ties occur
                det(image, b(x, y, 20.0, 20.0), rng.gen_range(0..25) as f64 / 4.0)
            })
            .collect();
        (dets, gts)
    }

    /// Recompute from scratch at every distinct threshold.
    fn naive_roc(dets: &[ImageDetection], gts: &[GroundTruthBox]) -> Vec<RocPoint> {
        let mut thresholds: Vec<f64> = dets.iter().map(|d| d.score).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let images: std::collections::BTreeSet<&str> =
            dets.iter().map(|d| d.image.as_str()).chain(gts.iter().map(|g| g.image.as_str())).collect();
        let mut out: Vec<RocPoint> = Vec::new();
        for t in thresholds {
            let (mut tp, mut fp) = (0, 0);
            for img in &images {
                let ds: Vec<ScoredBox> = dets
                    .iter()
                    .filter(|d| d.image == *img && d.score >= t)
                    .map(|d| ScoredBox { bbox: d.bbox, score: d.score })
                    .collect();
                let gs: Vec<BBox> = gts.iter().filter(|g| g.image == *img).map(|g| g.bbox).collect();
                let m = match_detections(&ds, &gs, PASCAL_IOU);
                tp += m.tp;
                fp += m.fp;
            }
            let p = RocPoint {
                score_threshold: t,
                false_positives: fp,
                true_positive_rate: tp as f64 / gts.len() as f64,
            };
            match out.last_mut() {
                Some(last) if last.false_positives == fp => *last = p,
                _ => out.push(p),
            }
        }
        out
    }

    #[test]
    fn roc_matches_naive_recompute() {
        for seed in 0..5 {
            let (dets, gts) = random_corpus(seed, 100);
            let fast = roc_points(&dets, &gts, PASCAL_IOU);
            assert_eq!(fast, naive_roc(&dets, &gts), "seed {seed}");
            for pair in fast.windows(2) {
                assert!(pair[1].false_positives > pair[0].false_positives);
                assert!(pair[1].true_positive_rate >= pair[0].true_positive_rate);
            }
        }
    }

    #[test]
    fn aggregation_fixtures() {
        let run = |pts: &[(usize, f64)]| -> Vec<RocPoint> {
            pts.iter()
                .map(|&(fp, tpr)| RocPoint { score_threshold: 0.0, false_positives: fp, true_positive_rate: tpr })
                .collect()
        };
        let grid = [0.0, 5.0, 10.0];
        let one = aggregate_runs(&[run(&[(0, 0.3), (4, 0.5)])], &grid).unwrap();
        for e in &one {
            assert_eq!(e.min_tpr, e.max_tpr);
            assert_eq!(e.mean_tpr, e.min_tpr);
        }
        let flat = aggregate_runs(&[run(&[(0, 0.4)]), run(&[(0, 0.6)])], &grid).unwrap();
        assert!(flat.iter().all(|e| (e.mean_tpr - 0.5).abs() < 1e-15));

        // hand-computed envelope for three step curves
        let runs = [
            run(&[(0, 0.2), (3, 0.5), (8, 0.7)]),
            run(&[(1, 0.1), (6, 0.6)]),
            run(&[(0, 0.3), (10, 0.9)]),
        ];
        let env = aggregate_runs(&runs, &grid).unwrap();
        // fp 0: 0.2, 0.0, 0.3   fp 5: 0.5, 0.1, 0.3   fp 10: 0.7, 0.6, 0.9
        let expect = [(0.0, 0.5 / 3.0, 0.3), (0.1, 0.9 / 3.0, 0.5), (0.6, 2.2 / 3.0, 0.9)];
        for (e, (lo, mean, hi)) in env.iter().zip(expect) {
            assert_eq!(e.min_tpr, lo);
            assert!((e.mean_tpr - mean).abs() < 1e-12);
            assert_eq!(e.max_tpr, hi);
        }
        assert!(matches!(aggregate_runs(&runs, &[]), Err(Error::EmptyGrid)));
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(
            ax in -20.0f64..20.0, ay in -20.0f64..20.0, aw in 0.5f64..30.0, ah in 0.5f64..30.0,
            bx in -20.0f64..20.0, by in -20.0f64..20.0, bw in 0.5f64..30.0, bh in 0.5f64..30.0,
        ) {
            let (a, c) = (b(ax, ay, aw, ah), b(bx, by, bw, bh));
            let o = iou(&a, &c).unwrap();
            prop_assert!((0.0..=1.0).contains(&o));
            prop_assert_eq!(o, iou(&c, &a).unwrap());
            prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn matching_counts_are_consistent(seed in 0u64..5000, n in 0usize..30) {
            let (dets, gts) = random_corpus(seed, n);
            let ds: Vec<ScoredBox> = dets.iter().filter(|d| d.image == "a")
                .map(|d| ScoredBox { bbox: d.bbox, score: d.score }).collect();
            let gs: Vec<BBox> = gts.iter().filter(|g| g.image == "a").map(|g| g.bbox).collect();
            let m = match_detections(&ds, &gs, PASCAL_IOU);
            prop_assert_eq!(m.tp + m.fp, ds.len());
            prop_assert!(m.tp <= gs.len());
            let mut gt_seen: Vec<usize> = m.pairs.iter().map(|p| p.1).collect();
            gt_seen.sort();
            gt_seen.dedup();
            prop_assert_eq!(gt_seen.len(), m.tp);
        }

        #[test]
        fn roc_is_permutation_invariant(seed in 0u64..5000, rot in 0usize..50) {
            let (mut dets, gts) = random_corpus(seed, 50);
            let before = roc_points(&dets, &gts, PASCAL_IOU);
            dets.rotate_left(rot);
            dets.reverse();
            prop_assert_eq!(before, roc_points(&dets, &gts, PASCAL_IOU));
        }
    }
}
