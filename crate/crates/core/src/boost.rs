//! Gentle AdaBoost over a candidate feature set.
//!
//! The same machinery trains real cascade stages (false-alarm driven) and
//! the short fixed-length dummy stages that score a GA population.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haar::{canonical_id_unchecked, CompiledFeature, HaarFeature};
use crate::stump::{
    check_training_set, scan_column, sorted_column, split_bounds, stump_from_split, DecisionStump,
    Label, Sample, Split, Totals, WeightVector,
};

/// Column caches above this many entries are recomputed every round instead.
const COLUMN_CACHE_LIMIT: usize = 1 << 25;

/// Hit-rate / false-alarm target for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageGoal {
    pub min_hit_rate: f64,
    pub max_false_alarm: f64,
    pub max_weak_count: usize,
}

impl Default for StageGoal {
    fn default() -> Self {
        Self {
            min_hit_rate: 0.9,
            max_false_alarm: 0.5,
            max_weak_count: 100,
        }
    }
}

impl StageGoal {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_hit_rate > 0.0 && self.min_hit_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "min_hit_rate must be in (0, 1], got {}",
                self.min_hit_rate
            )));
        }
        if !(self.max_false_alarm > 0.0 && self.max_false_alarm < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "max_false_alarm must be in (0, 1), got {}",
                self.max_false_alarm
            )));
        }
        if self.max_weak_count == 0 {
            return Err(Error::InvalidConfig("max_weak_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// A boosted sum of stumps; accepts when the summed response reaches the threshold.
#[derive(Debug, Clone)]
pub struct Stage {
    stumps: Vec<DecisionStump>,
    threshold: f64,
    compiled: Vec<CompiledFeature>,
}

impl PartialEq for Stage {
    fn eq(&self, other: &Self) -> bool {
        self.stumps == other.stumps && self.threshold.to_bits() == other.threshold.to_bits()
    }
}

impl Stage {
    pub fn new(stumps: Vec<DecisionStump>, threshold: f64) -> Result<Self> {
        if stumps.is_empty() {
            return Err(Error::InvalidConfig("a stage needs at least one stump".into()));
        }
        let compiled = stumps.iter().map(|s| CompiledFeature::new(&s.feature)).collect();
        Ok(Self {
            stumps,
            threshold,
            compiled,
        })
    }

    pub fn stumps(&self) -> &[DecisionStump] {
        &self.stumps
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub(crate) fn compiled(&self) -> &[CompiledFeature] {
        &self.compiled
    }

    /// Summed stump responses on a training-geometry window.
    pub fn score(&self, sample: &Sample) -> f64 {
        let mut total = 0.0;
        for (stump, f) in self.stumps.iter().zip(&self.compiled) {
            total += stump.respond(sample.feature_value(f));
        }
        total
    }

    pub fn accepts(&self, sample: &Sample) -> bool {
        self.score(sample) >= self.threshold
    }
}

/// Result of one boosting round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub best: DecisionStump,
    /// Index of the winner in the candidate list.
    pub best_index: usize,
    pub quality: f64,
    /// Split quality of every candidate, aligned with the candidate list.
    pub qualities: Vec<f64>,
    /// Updated and renormalised weights.
    pub weights: WeightVector,
}

/// Candidates and samples prepared for repeated boosting rounds.
pub(crate) struct Booster<'a> {
    candidates: &'a [HaarFeature],
    compiled: Vec<CompiledFeature>,
    ids: Vec<u64>,
    samples: &'a [Sample],
    labels: Vec<f64>,
    columns: Option<Vec<u32>>,
}

impl<'a> Booster<'a> {
    pub fn new(candidates: &'a [HaarFeature], samples: &'a [Sample], w: &WeightVector) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::NoCandidates);
        }
        check_training_set(samples, w)?;
        let (ww, wh) = (samples[0].width(), samples[0].height());
        for f in candidates {
            f.check(ww, wh)?;
        }
        let compiled: Vec<CompiledFeature> = candidates.iter().map(CompiledFeature::new).collect();
        let ids = candidates
            .iter()
            .map(|f| canonical_id_unchecked(f, ww, wh))
            .collect();
        let labels = samples.iter().map(|s| s.label().value()).collect();
        let mut booster = Self {
            candidates,
            compiled,
            ids,
            samples,
            labels,
            columns: None,
        };
        if candidates.len() * samples.len() <= COLUMN_CACHE_LIMIT {
            let n = samples.len();
            let mut flat = vec![0u32; candidates.len() * n];
            flat.par_chunks_mut(n)
                .zip(booster.compiled.par_iter())
                .for_each(|(dst, f)| dst.copy_from_slice(&sorted_column(&booster.values_of(f))));
            booster.columns = Some(flat);
        }
        Ok(booster)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    fn values_of(&self, f: &CompiledFeature) -> Vec<f64> {
        self.samples.iter().map(|s| s.feature_value(f)).collect()
    }

    fn split_of(&self, k: usize, weights: &[f64], totals: Totals) -> Split {
        match &self.columns {
            Some(flat) => {
                let n = self.samples.len();
                scan_column(&flat[k * n..(k + 1) * n], &self.labels, weights, totals)
            }
            None => {
                let order = sorted_column(&self.values_of(&self.compiled[k]));
                scan_column(&order, &self.labels, weights, totals)
            }
        }
    }

    /// One round: fit every candidate, keep the best (ties to the lowest
    /// canonical id), then reweight `w_i *= exp(-y_i * h(x_i))`.
    pub fn round(&self, w: &WeightVector) -> (RoundOutcome, Vec<f64>) {
        let weights = w.as_slice();
        let totals = Totals::new(&self.labels, weights);
        let splits: Vec<Split> = (0..self.len())
            .into_par_iter()
            .map(|k| self.split_of(k, weights, totals))
            .collect();
        let mut best = 0;
        for k in 1..splits.len() {
            let (q, qb) = (splits[k].quality, splits[best].quality);
            if q > qb || (q == qb && self.ids[k] < self.ids[best]) {
                best = k;
            }
        }
        let values = self.values_of(&self.compiled[best]);
        let order = sorted_column(&values);
        let (lo, hi) = split_bounds(&order, &values, &splits[best]);
        let stump = stump_from_split(self.candidates[best], &splits[best], lo, hi);
        let responses: Vec<f64> = values.iter().map(|&v| stump.respond(v)).collect();
        let mut next = w.clone();
        for ((wi, y), h) in next.as_mut_slice().iter_mut().zip(&self.labels).zip(&responses) {
            *wi *= (-y * h).exp();
        }
        next.normalize();
        let outcome = RoundOutcome {
            best: stump,
            best_index: best,
            quality: splits[best].quality,
            qualities: splits.iter().map(|s| s.quality).collect(),
            weights: next,
        };
        (outcome, responses)
    }
}

/// Single boosting round over `candidates`.
pub fn boost_round(candidates: &[HaarFeature], samples: &[Sample], w: &WeightVector) -> Result<RoundOutcome> {
    Ok(Booster::new(candidates, samples, w)?.round(w).0)
}

/// Outcome of [`train_stage`].
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub weights: WeightVector,
    pub hit_rate: f64,
    pub false_alarm: f64,
    /// False when `max_weak_count` was hit before the false-alarm target.
    pub goal_met: bool,
    /// Candidate stump fits performed (candidates x rounds).
    pub features_evaluated: u64,
}

/// Largest threshold keeping at least `min_hit_rate` of the positive scores.
pub(crate) fn hit_rate_threshold(positive_scores: &[f64], min_hit_rate: f64) -> f64 {
    let mut sorted = positive_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let need = ((min_hit_rate * sorted.len() as f64) - 1e-9).ceil() as usize;
    sorted[need.clamp(1, sorted.len()) - 1]
}

/// Boosts stumps until the stage meets `goal` on the training samples or
/// runs out of weak classifiers.
pub fn train_stage(
    candidates: &[HaarFeature],
    samples: &[Sample],
    goal: &StageGoal,
    w0: &WeightVector,
) -> Result<StageOutcome> {
    goal.validate()?;
    let booster = Booster::new(candidates, samples, w0)?;
    let positives: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].label() == Label::Positive)
        .collect();
    let negatives: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].label() == Label::Negative)
        .collect();

    let mut scores = vec![0.0; samples.len()];
    let mut stumps = Vec::new();
    let mut weights = w0.clone();
    let mut evaluated = 0u64;
    loop {
        let (outcome, responses) = booster.round(&weights);
        evaluated += booster.len() as u64;
        for (s, r) in scores.iter_mut().zip(&responses) {
            *s += r;
        }
        stumps.push(outcome.best);
        weights = outcome.weights;

        let pos_scores: Vec<f64> = positives.iter().map(|&i| scores[i]).collect();
        let threshold = hit_rate_threshold(&pos_scores, goal.min_hit_rate);
        let rate = |idx: &[usize]| {
            idx.iter().filter(|&&i| scores[i] >= threshold).count() as f64 / idx.len() as f64
        };
        let (hit_rate, false_alarm) = (rate(&positives), rate(&negatives));
        log::debug!(
            "stage round {}: quality {:.5}, hit {:.3}, fa {:.3}",
            stumps.len(),
            outcome.quality,
            hit_rate,
            false_alarm
        );
        let goal_met = false_alarm <= goal.max_false_alarm;
        if goal_met || stumps.len() >= goal.max_weak_count {
            return Ok(StageOutcome {
                stage: Stage::new(stumps, threshold)?,
                weights,
                hit_rate,
                false_alarm,
                goal_met,
                features_evaluated: evaluated,
            });
        }
    }
}

/// Outcome of a fixed-length (dummy) boosting run.
#[derive(Debug, Clone)]
pub struct DummyOutcome {
    /// Per-candidate maximum quality across all rounds.
    pub best_quality: Vec<f64>,
    pub weights: WeightVector,
    pub features_evaluated: u64,
}

/// Runs exactly `rounds` boosting rounds; the stumps are discarded and only
/// candidate qualities and the carried weights are kept.
pub fn train_dummy_stage(
    candidates: &[HaarFeature],
    samples: &[Sample],
    rounds: usize,
    w0: &WeightVector,
) -> Result<DummyOutcome> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("dummy stages need at least one round".into()));
    }
    let booster = Booster::new(candidates, samples, w0)?;
    let mut best_quality = vec![0.0f64; candidates.len()];
    let mut weights = w0.clone();
    for _ in 0..rounds {
        let (outcome, _) = booster.round(&weights);
        for (b, q) in best_quality.iter_mut().zip(&outcome.qualities) {
            *b = b.max(*q);
        }
        weights = outcome.weights;
    }
    Ok(DummyOutcome {
        best_quality,
        weights,
        features_evaluated: (rounds * candidates.len()) as u64,
    })
}
