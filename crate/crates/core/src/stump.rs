//! Weighted regression stumps and the split-quality score used as fitness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haar::{CompiledFeature, HaarFeature, IntegralImage};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

/// A training window with its ground-truth response.
#[derive(Debug, Clone)]
pub struct Sample {
    ii: IntegralImage,
    label: Label,
    inv_norm: f64,
}

impl Sample {
    /// Wraps a window image. The window's variance normaliser is computed
    /// here, once, so every feature value is taken on the normalised window.
    pub fn new(window: &GrayImage, label: Label) -> Self {
        let ii = IntegralImage::new(window);
        let inv_norm = ii.inv_norm(0, 0, window.width(), window.height());
        Self {
            ii,
            label,
            inv_norm,
        }
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn integral(&self) -> &IntegralImage {
        &self.ii
    }

    pub fn width(&self) -> usize {
        self.ii.width()
    }

    pub fn height(&self) -> usize {
        self.ii.height()
    }

    pub fn inv_norm(&self) -> f64 {
        self.inv_norm
    }

    #[inline]
    pub fn feature_value(&self, f: &CompiledFeature) -> f64 {
        f.eval(&self.ii, 0, 0) as f64 * self.inv_norm
    }
}

/// Non-negative sample weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Normalises arbitrary non-negative weights.
    pub fn from_raw(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidSamples("weights must be finite and >= 0".into()));
        }
        let mut v = Self(weights);
        if v.total() <= 0.0 {
            return Err(Error::InvalidSamples("weights sum to zero".into()));
        }
        v.normalize();
        Ok(v)
    }

    pub fn normalize(&mut self) {
        let total = self.total();
        for w in &mut self.0 {
            *w /= total;
        }
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Single-feature threshold regressor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionStump {
    pub feature: HaarFeature,
    pub threshold: f64,
    /// Response when the feature value is below the threshold.
    pub left_value: f64,
    /// Response otherwise (ties go right).
    pub right_value: f64,
}

impl DecisionStump {
    #[inline]
    pub fn respond(&self, value: f64) -> f64 {
        if value < self.threshold {
            self.left_value
        } else {
            self.right_value
        }
    }
}

/// Prediction of `s` on a training-geometry window.
pub fn stump_predict(s: &DecisionStump, sample: &Sample) -> f64 {
    s.respond(sample.feature_value(&CompiledFeature::new(&s.feature)))
}

/// Marks a sorted position whose value differs from the next one.
pub(crate) const BOUNDARY: u32 = 1 << 31;
const INDEX_MASK: u32 = BOUNDARY - 1;

/// Sample indices sorted by feature value, with split boundaries flagged.
pub(crate) fn sorted_column(values: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        values[a as usize]
            .total_cmp(&values[b as usize])
            .then(a.cmp(&b))
    });
    for i in 0..order.len().saturating_sub(1) {
        if values[order[i] as usize] != values[order[i + 1] as usize] {
            order[i] |= BOUNDARY;
        }
    }
    order
}

#[inline]
pub(crate) fn column_index(entry: u32) -> usize {
    (entry & INDEX_MASK) as usize
}

/// Weighted label mass of the whole sample set.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Totals {
    pub weight: f64,
    pub weighted_label: f64,
}

impl Totals {
    pub fn new(labels: &[f64], weights: &[f64]) -> Self {
        let mut t = Totals {
            weight: 0.0,
            weighted_label: 0.0,
        };
        for (y, w) in labels.iter().zip(weights) {
            t.weight += w;
            t.weighted_label += w * y;
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Split {
    pub quality: f64,
    /// Sorted position of the last sample sent left; `None` when no split exists.
    pub position: Option<usize>,
    pub left_value: f64,
    pub right_value: f64,
}

/// Best squared-error split along one sorted column.
///
/// Quality is the drop in weighted squared error against the constant
/// predictor, `L^2/Wl + R^2/Wr - T^2/W` in weighted-label sums.
pub(crate) fn scan_column(order: &[u32], labels: &[f64], weights: &[f64], totals: Totals) -> Split {
    let mean = if totals.weight > 0.0 {
        totals.weighted_label / totals.weight
    } else {
        0.0
    };
    let parent = totals.weighted_label * mean;
    let mut best = Split {
        quality: f64::NEG_INFINITY,
        position: None,
        left_value: mean,
        right_value: mean,
    };
    let (mut wl, mut yl) = (0.0, 0.0);
    for (pos, &entry) in order.iter().enumerate() {
        let i = column_index(entry);
        wl += weights[i];
        yl += weights[i] * labels[i];
        if entry & BOUNDARY == 0 {
            continue;
        }
        let (wr, yr) = (totals.weight - wl, totals.weighted_label - yl);
        let left = if wl > 0.0 { yl / wl } else { 0.0 };
        let right = if wr > 0.0 { yr / wr } else { 0.0 };
        let quality = yl * left + yr * right - parent;
        if quality > best.quality {
            best = Split {
                quality,
                position: Some(pos),
                left_value: left,
                right_value: right,
            };
        }
    }
    if best.position.is_none() {
        best.quality = 0.0;
    }
    best.quality = best.quality.max(0.0);
    best.left_value = best.left_value.clamp(-1.0, 1.0);
    best.right_value = best.right_value.clamp(-1.0, 1.0);
    best
}

/// Turns a split found on `order` into a stump with a midpoint threshold.
pub(crate) fn stump_from_split(feature: HaarFeature, split: &Split, lo: f64, hi: f64) -> DecisionStump {
    let threshold = match split.position {
        None => f64::INFINITY,
        Some(_) => {
            let mid = lo + (hi - lo) / 2.0;
            if mid > lo {
                mid
            } else {
                hi
            }
        }
    };
    DecisionStump {
        feature,
        threshold,
        left_value: split.left_value,
        right_value: split.right_value,
    }
}

pub(crate) fn check_training_set(samples: &[Sample], w: &WeightVector) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::InvalidSamples("at least two samples are required".into()));
    }
    if w.len() != samples.len() {
        return Err(Error::InvalidSamples(format!(
            "{} weights for {} samples",
            w.len(),
            samples.len()
        )));
    }
    let positives = samples.iter().filter(|s| s.label == Label::Positive).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::InvalidSamples("both labels must be present".into()));
    }
    let (w0, h0) = (samples[0].width(), samples[0].height());
    if samples.iter().any(|s| s.width() != w0 || s.height() != h0) {
        return Err(Error::InvalidSamples("samples differ in window size".into()));
    }
    Ok(())
}

/// Fits the squared-error-optimal stump for one feature and returns it with
/// its split quality (variance reduction, never negative).
pub fn train_stump(f: &HaarFeature, samples: &[Sample], w: &WeightVector) -> Result<(DecisionStump, f64)> {
    check_training_set(samples, w)?;
    f.check(samples[0].width(), samples[0].height())?;
    let compiled = CompiledFeature::new(f);
    let values: Vec<f64> = samples.iter().map(|s| s.feature_value(&compiled)).collect();
    let labels: Vec<f64> = samples.iter().map(|s| s.label.value()).collect();
    let order = sorted_column(&values);
    let totals = Totals::new(&labels, w.as_slice());
    let split = scan_column(&order, &labels, w.as_slice(), totals);
    let (lo, hi) = split_bounds(&order, &values, &split);
    Ok((stump_from_split(*f, &split, lo, hi), split.quality))
}

pub(crate) fn split_bounds(order: &[u32], values: &[f64], split: &Split) -> (f64, f64) {
    match split.position {
        Some(p) => (
            values[column_index(order[p])],
            values[column_index(order[p + 1])],
        ),
        None => (f64::INFINITY, f64::INFINITY),
    }
}
