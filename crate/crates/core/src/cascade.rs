//! Multi-stage cascade training, negative bootstrapping and classification.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boost::{train_stage, Stage, StageGoal};
use crate::error::{Error, Result};
use crate::ga::{evolve_stage_population, GaConfig, GenerationRecord, RegistryScope, UsedFeatureRegistry};
use crate::haar::{enumerate_features, HaarFeature, HaarType, IntegralImage};
use crate::image::{resample_region, GrayImage};
use crate::stump::{DecisionStump, Label, Sample, WeightVector};

const MODEL_MAGIC: &str = "gadaboost-cascade";
const MODEL_VERSION: u32 = 1;

/// Feature-selection back end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainMode {
    /// Every stage boosts over the full feature enumeration.
    Baseline,
    /// Every stage boosts over a genetically evolved subset.
    Ga(GaConfig),
}

impl TrainMode {
    pub fn label(&self) -> String {
        match self {
            TrainMode::Baseline => "baseline".into(),
            TrainMode::Ga(cfg) => format!("ga(pop={},iters={})", cfg.population_size, cfg.max_iterations),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub window_w: usize,
    pub window_h: usize,
    pub num_stages: usize,
    pub pos_per_stage: usize,
    pub neg_per_stage: usize,
    pub stage_goal: StageGoal,
    pub mode: TrainMode,
    pub rng_seed: u64,
    /// Random windows tried per stage before negative harvesting gives up.
    pub max_harvest_attempts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window_w: 24,
            window_h: 24,
            num_stages: 17,
            pos_per_stage: 500,
            neg_per_stage: 500,
            stage_goal: StageGoal::default(),
            mode: TrainMode::Baseline,
            rng_seed: 0,
            max_harvest_attempts: 1_000_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_w == 0 || self.window_h == 0 {
            return Err(Error::InvalidConfig("window dimensions must be positive".into()));
        }
        if self.num_stages == 0 {
            return Err(Error::InvalidConfig("num_stages must be >= 1".into()));
        }
        if self.pos_per_stage == 0 || self.neg_per_stage == 0 {
            return Err(Error::InvalidConfig("per-stage sample counts must be >= 1".into()));
        }
        self.stage_goal.validate()?;
        if let TrainMode::Ga(ga) = &self.mode {
            ga.validate()?;
        }
        Ok(())
    }
}

/// Outcome of scoring one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeVerdict {
    pub accepted: bool,
    /// Zero-based index of the rejecting stage.
    pub rejected_at: Option<usize>,
    /// For accepted windows the summed stage margins (score minus
    /// threshold); for rejected ones the negative margin of the rejecting
    /// stage.
    pub margin: f64,
}

/// Ordered stages over a fixed training window.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    window_w: usize,
    window_h: usize,
    stages: Vec<Stage>,
}

impl Cascade {
    pub fn new(window_w: usize, window_h: usize, stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidConfig("a cascade needs at least one stage".into()));
        }
        for stage in &stages {
            for stump in stage.stumps() {
                stump.feature.check(window_w, window_h)?;
            }
        }
        Ok(Self {
            window_w,
            window_h,
            stages,
        })
    }

    pub fn window(&self) -> (usize, usize) {
        (self.window_w, self.window_h)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// The first `n` stages as a cascade of their own.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        Self::new(self.window_w, self.window_h, self.stages[..n.min(self.stages.len())].to_vec())
    }

    /// Classification of a training-geometry sample.
    pub fn accepts_sample(&self, sample: &Sample) -> bool {
        stages_accept(&self.stages, sample)
    }

    /// Evaluates the window of size `round(window * scale)` at `(ox, oy)`.
    pub fn score(&self, ii: &IntegralImage, ox: usize, oy: usize, scale: f64) -> Result<CascadeVerdict> {
        let (w, h) = scaled_window(self.window_w, self.window_h, scale);
        if w == 0 || h == 0 || ox + w > ii.width() || oy + h > ii.height() {
            return Err(Error::OutOfBounds {
                ox,
                oy,
                width: ii.width(),
                height: ii.height(),
            });
        }
        let inv_norm = ii.inv_norm(ox, oy, w, h);
        let mut margin = 0.0;
        for (k, stage) in self.stages.iter().enumerate() {
            let mut total = 0.0;
            for (stump, f) in stage.stumps().iter().zip(stage.compiled()) {
                total += stump.respond(f.eval_scaled(ii, ox, oy, scale) * inv_norm);
            }
            if total < stage.threshold() {
                return Ok(CascadeVerdict {
                    accepted: false,
                    rejected_at: Some(k),
                    margin: total - stage.threshold(),
                });
            }
            margin += total - stage.threshold();
        }
        Ok(CascadeVerdict {
            accepted: true,
            rejected_at: None,
            margin,
        })
    }

    /// Versioned text model; floats use shortest round-trip formatting.
    pub fn to_model_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(out, "window {} {}", self.window_w, self.window_h);
        let _ = writeln!(out, "stages {}", self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let _ = writeln!(out, "stage {} {} {}", i, stage.stumps().len(), stage.threshold());
            for s in stage.stumps() {
                let f = &s.feature;
                let _ = writeln!(
                    out,
                    "{} {} {} {} {} {} {} {}",
                    f.htype.code(),
                    f.x,
                    f.y,
                    f.x1,
                    f.y1,
                    s.threshold,
                    s.left_value,
                    s.right_value
                );
            }
        }
        out
    }

    pub fn from_model_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Model {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            })
        };
        let err = |line: usize, message: String| Error::Model { line, message };

        let (ln, header) = next("header")?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 2 || head[0] != MODEL_MAGIC {
            return Err(err(ln, format!("expected `{MODEL_MAGIC} <version>`")));
        }
        if head[1] != MODEL_VERSION.to_string() {
            return Err(err(ln, format!("unsupported model version {}", head[1])));
        }
        let (ln, window) = next("window")?;
        let window = keyed(window, "window", 2).map_err(|m| err(ln, m))?;
        let (ww, wh) = (parse::<usize>(window[0], ln)?, parse::<usize>(window[1], ln)?);
        let (ln, count) = next("stage count")?;
        let count = parse::<usize>(keyed(count, "stages", 1).map_err(|m| err(ln, m))?[0], ln)?;

        let mut stages = Vec::with_capacity(count);
        for i in 0..count {
            let (ln, head) = next("stage header")?;
            let head = keyed(head, "stage", 3).map_err(|m| err(ln, m))?;
            if parse::<usize>(head[0], ln)? != i {
                return Err(err(ln, format!("expected stage {i}")));
            }
            let n = parse::<usize>(head[1], ln)?;
            let threshold = parse::<f64>(head[2], ln)?;
            let mut stumps = Vec::with_capacity(n);
            for _ in 0..n {
                let (ln, row) = next("stump")?;
                let fields: Vec<&str> = row.split_whitespace().collect();
                if fields.len() != 8 {
                    return Err(err(ln, format!("stump needs 8 fields, found {}", fields.len())));
                }
                let code = parse::<u8>(fields[0], ln)?;
                let htype =
                    HaarType::from_code(code).ok_or_else(|| err(ln, format!("unknown type code {code}")))?;
                let feature = HaarFeature {
                    x: parse(fields[1], ln)?,
                    y: parse(fields[2], ln)?,
                    x1: parse(fields[3], ln)?,
                    y1: parse(fields[4], ln)?,
                    htype,
                };
                feature.check(ww, wh).map_err(|e| err(ln, e.to_string()))?;
                stumps.push(DecisionStump {
                    feature,
                    threshold: parse(fields[5], ln)?,
                    left_value: parse(fields[6], ln)?,
                    right_value: parse(fields[7], ln)?,
                });
            }
            stages.push(Stage::new(stumps, threshold).map_err(|e| err(ln, e.to_string()))?);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing content".into()));
        }
        Self::new(ww, wh, stages)
    }
}

fn keyed<'a>(line: &'a str, key: &str, n: usize) -> std::result::Result<Vec<&'a str>, String> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(format!("expected `{key}`"));
    }
    let rest: Vec<&str> = it.collect();
    if rest.len() != n {
        return Err(format!("`{key}` takes {n} values"));
    }
    Ok(rest)
}

fn parse<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Model {
        line,
        message: format!("cannot parse `{s}`"),
    })
}

pub(crate) fn scaled_window(w: usize, h: usize, scale: f64) -> (usize, usize) {
    ((w as f64 * scale).round() as usize, (h as f64 * scale).round() as usize)
}

fn stages_accept(stages: &[Stage], sample: &Sample) -> bool {
    stages.iter().all(|s| s.accepts(sample))
}

/// Free-function form of [`Cascade::score`].
pub fn cascade_score(c: &Cascade, ii: &IntegralImage, ox: usize, oy: usize, scale: f64) -> Result<CascadeVerdict> {
    c.score(ii, ox, oy, scale)
}

/// Per-stage training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub stumps: usize,
    pub hit_rate: f64,
    pub false_alarm: f64,
    pub goal_met: bool,
    /// Distinct features offered to the real stage.
    pub candidates: usize,
    /// Stump fits over the whole stage, GA dummy stages included.
    pub features_evaluated: u64,
    pub harvest_attempts: usize,
    /// Fraction of random negative windows the preceding stages accepted.
    pub harvest_acceptance: f64,
    pub seconds: f64,
    pub ga_seconds: f64,
    pub ga_trace: Vec<GenerationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: String,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    /// Set when training ended before `num_stages`.
    pub stopped_early: Option<String>,
    pub total_seconds: f64,
}

impl TrainReport {
    pub fn features_evaluated(&self) -> u64 {
        self.stages.iter().map(|s| s.features_evaluated).sum()
    }
}

struct NegativePool {
    images: Vec<IntegralImage>,
}

impl NegativePool {
    /// Draws random windows until `n` of them pass `stages`. Draw order per
    /// attempt: image index, scale, x, y.
    fn harvest(
        &self,
        stages: &[Stage],
        n: usize,
        window: (usize, usize),
        max_attempts: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<Sample>, usize)> {
        let (ww, wh) = window;
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n && attempts < max_attempts {
            attempts += 1;
            let ii = &self.images[rng.gen_range(0..self.images.len())];
            let max_scale = (ii.width() as f64 / ww as f64).min(ii.height() as f64 / wh as f64);
            let scale = if max_scale > 1.0 {
                rng.gen_range(1.0..=max_scale)
            } else {
                1.0
            };
            let (sw, sh) = scaled_window(ww, wh, scale);
            let (sw, sh) = (sw.clamp(ww, ii.width()), sh.clamp(wh, ii.height()));
            let x = rng.gen_range(0..=ii.width() - sw);
            let y = rng.gen_range(0..=ii.height() - sh);
            let window = resample_region(ii, x, y, sw, sh, ww, wh)?;
            let sample = Sample::new(&window, Label::Negative);
            if stages_accept(stages, &sample) {
                out.push(sample);
            }
        }
        Ok((out, attempts))
    }
}

/// Trains a cascade stage by stage.
///
/// Per stage: the first `pos_per_stage` pool positives the current cascade
/// still accepts, `neg_per_stage` negative windows it falsely accepts, and a
/// real stage boosted over the full enumeration (baseline) or over the
/// evolved population (GA). Negative harvesting and the GA draw from
/// separate random streams, so both modes see identical negatives for
/// identical cascades.
pub fn train_cascade(
    pos_pool: &[GrayImage],
    neg_pool: &[GrayImage],
    cfg: &TrainConfig,
) -> Result<(Cascade, TrainReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let window = (cfg.window_w, cfg.window_h);
    if pos_pool.len() < cfg.pos_per_stage {
        return Err(Error::InsufficientPositives {
            available: pos_pool.len(),
            required: cfg.pos_per_stage,
        });
    }
    if neg_pool.is_empty() {
        return Err(Error::InvalidSamples("negative pool is empty".into()));
    }
    if neg_pool.iter().any(|img| img.width() < cfg.window_w || img.height() < cfg.window_h) {
        return Err(Error::InvalidSamples("negative images must be at least window-sized".into()));
    }
    let positives: Vec<Sample> = pos_pool
        .iter()
        .map(|img| {
            let window = if (img.width(), img.height()) == window {
                img.clone()
            } else {
                img.resize(cfg.window_w, cfg.window_h)?
            };
            Ok(Sample::new(&window, Label::Positive))
        })
        .collect::<Result<_>>()?;
    let negatives = NegativePool {
        images: neg_pool.iter().map(IntegralImage::new).collect(),
    };

    let mut harvest_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    harvest_rng.set_stream(0);
    let mut ga_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    ga_rng.set_stream(1);

    let full_space = match cfg.mode {
        TrainMode::Baseline => enumerate_features(cfg.window_w, cfg.window_h),
        TrainMode::Ga(_) => Vec::new(),
    };
    let mut registry = UsedFeatureRegistry::new(cfg.window_w, cfg.window_h);

    let mut stages: Vec<Stage> = Vec::new();
    let mut reports = Vec::new();
    let mut stopped_early = None;
    for k in 0..cfg.num_stages {
        let stage_start = Instant::now();
        let mut samples: Vec<Sample> = positives
            .iter()
            .filter(|s| stages_accept(&stages, s))
            .take(cfg.pos_per_stage)
            .cloned()
            .collect();
        if samples.len() < cfg.pos_per_stage {
            return Err(Error::InsufficientPositives {
                available: samples.len(),
                required: cfg.pos_per_stage,
            });
        }
        let (negs, attempts) =
            negatives.harvest(&stages, cfg.neg_per_stage, window, cfg.max_harvest_attempts, &mut harvest_rng)?;
        if negs.len() < cfg.neg_per_stage {
            let reason = format!(
                "stage {k}: only {} of {} false-positive negatives found in {attempts} windows",
                negs.len(),
                cfg.neg_per_stage
            );
            if stages.is_empty() {
                return Err(Error::InvalidSamples(reason));
            }
            log::warn!("{reason}; stopping early");
            stopped_early = Some(reason);
            break;
        }
        let harvest_acceptance = negs.len() as f64 / attempts as f64;
        samples.extend(negs);
        let w0 = WeightVector::uniform(samples.len());

        let (outcome, candidates, ga_evaluated, ga_seconds, ga_trace) = match &cfg.mode {
            TrainMode::Baseline => {
                let outcome = train_stage(&full_space, &samples, &cfg.stage_goal, &w0)?;
                (outcome, full_space.len(), 0, 0.0, Vec::new())
            }
            TrainMode::Ga(ga) => {
                let ga_start = Instant::now();
                if ga.registry_scope == RegistryScope::Stage {
                    registry = UsedFeatureRegistry::new(cfg.window_w, cfg.window_h);
                }
                let evolved = evolve_stage_population(&samples, &w0, ga, &mut registry, &mut ga_rng)?;
                let ga_seconds = ga_start.elapsed().as_secs_f64();
                let w_real = if ga.carry_weights_into_real_stage {
                    evolved.weights.clone()
                } else {
                    w0.clone()
                };
                let outcome = train_stage(&evolved.features, &samples, &cfg.stage_goal, &w_real)?;
                (
                    outcome,
                    evolved.features.len(),
                    evolved.features_evaluated,
                    ga_seconds,
                    evolved.trace,
                )
            }
        };
        let report = StageReport {
            stage: k,
            stumps: outcome.stage.stumps().len(),
            hit_rate: outcome.hit_rate,
            false_alarm: outcome.false_alarm,
            goal_met: outcome.goal_met,
            candidates,
            features_evaluated: outcome.features_evaluated + ga_evaluated,
            harvest_attempts: attempts,
            harvest_acceptance,
            seconds: stage_start.elapsed().as_secs_f64(),
            ga_seconds,
            ga_trace,
        };
        log::info!(
            "stage {k}: {} stumps, hit {:.3}, fa {:.3}, {} fits, {:.2}s",
            report.stumps,
            report.hit_rate,
            report.false_alarm,
            report.features_evaluated,
            report.seconds
        );
        reports.push(report);
        stages.push(outcome.stage);
    }

    let cascade = Cascade::new(cfg.window_w, cfg.window_h, stages)?;
    let report = TrainReport {
        mode: cfg.mode.label(),
        seed: cfg.rng_seed,
        stages: reports,
        stopped_early,
        total_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((cascade, report))
}
