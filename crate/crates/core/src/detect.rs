//! Multi-scale sliding-window detection and detection grouping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{scaled_window, Cascade};
use crate::eval::{iou_unchecked, BBox, ScoredBox, PASCAL_IOU};
use crate::haar::IntegralImage;
use crate::image::GrayImage;

pub const DEFAULT_SCALE_FACTOR: f64 = 1.25;
pub const DEFAULT_STEP: usize = 2;
pub const DEFAULT_MIN_NEIGHBORS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    /// Summed stage margins, see [`crate::cascade::CascadeVerdict`].
    pub score: f64,
    pub scale: f64,
}

impl Detection {
    pub fn scored_box(&self) -> ScoredBox {
        ScoredBox {
            bbox: self.bbox,
            score: self.score,
        }
    }
}

fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        a.bbox
            .y
            .total_cmp(&b.bbox.y)
            .then(a.bbox.x.total_cmp(&b.bbox.x))
            .then(a.scale.total_cmp(&b.scale))
    });
}

/// Scans scales `scale_factor^k` while the scaled window fits, with stride
/// `round(step * s)`. Returns every accepted window sorted by (y, x, scale).
///
/// # Panics
///
/// Panics if `scale_factor <= 1` or `step == 0`.
pub fn detect(img: &GrayImage, cascade: &Cascade, scale_factor: f64, step: usize) -> Vec<Detection> {
    assert!(scale_factor > 1.0, "scale_factor must exceed 1");
    assert!(step > 0, "step must be positive");
    let (ww, wh) = cascade.window();
    let ii = IntegralImage::new(img);
    let mut scales = Vec::new();
    let mut s = 1.0f64;
    loop {
        let (w, h) = scaled_window(ww, wh, s);
        if w > img.width() || h > img.height() {
            break;
        }
        scales.push(s);
        s *= scale_factor;
    }

    let mut dets: Vec<Detection> = scales
        .par_iter()
        .flat_map_iter(|&s| {
            let (w, h) = scaled_window(ww, wh, s);
            let stride = ((step as f64 * s).round() as usize).max(1);
            let ii = &ii;
            (0..=img.height() - h).step_by(stride).flat_map(move |y| {
                (0..=img.width() - w).step_by(stride).filter_map(move |x| {
                    let v = cascade.score(ii, x, y, s).expect("window lies inside the image");
                    v.accepted.then(|| Detection {
                        bbox: BBox::new(x as f64, y as f64, w as f64, h as f64),
                        score: v.margin,
                        scale: s,
                    })
                })
            })
        })
        .collect();
    sort_detections(&mut dets);
    dets
}

/// Maps a margin onto `[0, 1)`, monotonically for non-negative input.
fn squash(margin: f64) -> f64 {
    let m = margin.max(0.0);
    m / (1.0 + m)
}

/// Clusters detections around seeds: the highest-margin unassigned
/// detection absorbs every unassigned detection overlapping it at IoU > 0.4.
/// Each cluster of at least `min_neighbors` detections becomes its mean box,
/// scored by cluster size with the best member margin squashed into
/// `[0, 1)` as a tie-break.
pub fn group_detections(dets: &[Detection], min_neighbors: usize) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .total_cmp(&da.score)
            .then(da.bbox.y.total_cmp(&db.bbox.y))
            .then(da.bbox.x.total_cmp(&db.bbox.x))
            .then(da.scale.total_cmp(&db.scale))
    });
    let mut assigned = vec![false; dets.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &seed in &order {
        if assigned[seed] {
            continue;
        }
        let members: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&j| !assigned[j] && (j == seed || iou_unchecked(&dets[seed].bbox, &dets[j].bbox) > PASCAL_IOU))
            .collect();
        for &j in &members {
            assigned[j] = true;
        }
        clusters.push(members);
    }
    let mut out: Vec<Detection> = clusters
        .into_iter()
        .filter(|c| c.len() >= min_neighbors.max(1))
        .map(|c| {
            let k = c.len() as f64;
            let mean = |f: fn(&Detection) -> f64| c.iter().map(|&i| f(&dets[i])).sum::<f64>() / k;
            Detection {
                bbox: BBox::new(
                    mean(|d| d.bbox.x),
                    mean(|d| d.bbox.y),
                    mean(|d| d.bbox.w),
                    mean(|d| d.bbox.h),
                ),
                score: k + squash(c.iter().map(|&i| dets[i].score).fold(f64::NEG_INFINITY, f64::max)),
                scale: mean(|d| d.scale),
            }
        })
        .collect();
    sort_detections(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::Stage;
    use crate::cascade::{train_cascade, TrainConfig};
    use crate::haar::{HaarFeature, HaarType};
    use crate::stump::{DecisionStump, Label, Sample};
    use crate::synth::{CorpusSpec, DeskCorpus};

    fn det(x: f64, y: f64, w: f64, score: f64) -> Detection {
        Detection { bbox: BBox::new(x, y, w, w), score, scale: w / 10.0 }
    }

    /// Accepts windows whose left half is brighter than the right half.
    fn left_bright_cascade() -> Cascade {
        let f = HaarFeature::new(0, 0, 4, 4, HaarType::HaarX2, 4, 4).unwrap();
        let stump = DecisionStump { feature: f, threshold: 0.5, left_value: -1.0, right_value: 1.0 };
        Cascade::new(4, 4, vec![Stage::new(vec![stump], 0.0).unwrap()]).unwrap()
    }

    #[test]
    fn grouping_fixtures() {
        assert!(group_detections(&[], 2).is_empty());

        let same = vec![det(5.0, 5.0, 10.0, 1.0); 4];
        let g = group_detections(&same, 3);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].bbox, same[0].bbox);

        let mut two = vec![det(0.0, 0.0, 10.0, 0.1), det(1.0, 0.0, 10.0, 0.7), det(0.0, 1.0, 10.0, 0.2)];
        two.extend([det(50.0, 50.0, 10.0, 0.3), det(51.0, 51.0, 10.0, 0.4), det(50.0, 51.0, 10.0, 0.5)]);
        for a in 0..3 {
            for b in 0..3 {
                assert!(iou_unchecked(&two[a].bbox, &two[b].bbox) > PASCAL_IOU);
                assert_eq!(iou_unchecked(&two[a].bbox, &two[3 + b].bbox), 0.0);
            }
        }
        let g = group_detections(&two, 2);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].score, 3.0 + 0.7 / 1.7);
        assert_eq!(g[1].score, 3.0 + 0.5 / 1.5);
        assert!((g[0].bbox.x - 1.0 / 3.0).abs() < 1e-12);
        assert!(group_detections(&two, 4).is_empty());
    }

    #[test]
    fn grouped_boxes_overlap_enough_members() {
        let dets: Vec<Detection> = (0..30)
            .map(|i| det((i % 7) as f64 * 3.0, (i / 7) as f64 * 4.0, 10.0 + (i % 3) as f64, i as f64))
            .collect();
        for g in group_detections(&dets, 2) {
            let overlapping = dets.iter().filter(|d| iou_unchecked(&g.bbox, &d.bbox) > PASCAL_IOU).count();
            assert!(overlapping >= 2);
        }
    }

    #[test]
    fn detections_are_accepted_and_sorted() {
        let img = GrayImage::from_fn(20, 16, |x, y| if (x + y / 3) % 6 < 3 { 220 } else { 20 }).unwrap();
        let c = left_bright_cascade();
        let dets = detect(&img, &c, 1.25, 1);
        assert!(!dets.is_empty());
        let ii = IntegralImage::new(&img);
        for d in &dets {
            assert!(d.bbox.x + d.bbox.w <= 20.0 && d.bbox.y + d.bbox.h <= 16.0);
            assert!(d.bbox.w >= 4.0);
            let v = c.score(&ii, d.bbox.x as usize, d.bbox.y as usize, d.scale).unwrap();
            assert!(v.accepted);
            assert_eq!(v.margin, d.score);
        }
        assert!(dets.windows(2).all(|p| (p[0].bbox.y, p[0].bbox.x, p[0].scale) <= (p[1].bbox.y, p[1].bbox.x, p[1].scale)));
        assert_eq!(dets, detect(&img, &c, 1.25, 1));
        assert!(detect(&img, &c, 1.25, 2).len() <= dets.len());
    }

    #[test]
    fn small_or_blank_images_yield_nothing() {
        let c = left_bright_cascade();
        assert!(detect(&GrayImage::filled(3, 10, 100).unwrap(), &c, 1.25, 2).is_empty());
        assert!(detect(&GrayImage::filled(40, 40, 100).unwrap(), &c, 1.25, 2).is_empty());
    }

    #[test]
    fn trained_cascade_finds_an_upscaled_positive() {
        let corpus = DeskCorpus::generate(
            &CorpusSpec { window: 12, positives: 300, negative_images: 12, negative_size: 48, test_images: 0, ..CorpusSpec::default() },
            11,
        );
        let cfg = TrainConfig {
            window_w: 12,
            window_h: 12,
            num_stages: 3,
            pos_per_stage: 100,
            neg_per_stage: 100,
            ..TrainConfig::default()
        };
        let (cascade, _) = train_cascade(&corpus.positives, &corpus.negatives, &cfg).unwrap();
        let face = corpus
            .positives
            .iter()
            .find(|p| cascade.accepts_sample(&Sample::new(p, Label::Positive)))
            .expect("some positive survives")
            .upscale(3);
        let truth = BBox::new(0.0, 0.0, 36.0, 36.0);
        let dets = detect(&face, &cascade, 1.25, 2);
        assert!(dets.iter().any(|d| iou_unchecked(&d.bbox, &truth) > PASCAL_IOU));
    }
}
