//! Genetic search over the Haar feature space.
//!
//! Each cascade stage evolves a population of features (one feature per
//! chromosome) scored by short dummy boosting runs; the final population is
//! the candidate set for the real stage.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boost::train_dummy_stage;
use crate::error::{Error, Result};
use crate::eval::{iou_unchecked, BBox};
use crate::haar::{canonical_id_unchecked, enumerate_features, HaarFeature, HaarType};
use crate::stump::{Sample, WeightVector};

/// A chromosome is exactly a Haar feature: `(x, y, x1, y1, type)`.
pub type Chromosome = HaarFeature;

/// Lifetime of the used-feature registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegistryScope {
    /// One registry shared by every stage of a cascade run.
    Cascade,
    /// A fresh registry per stage.
    Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub max_iterations: usize,
    pub dummy_weak_count: usize,
    pub dedup_iou_threshold: f64,
    /// Even-generation spatial deduplication.
    pub dedup_enabled: bool,
    /// Relative mean-fitness improvement below which a generation counts as stalled.
    pub saturation_epsilon: f64,
    /// Consecutive stalled generations that stop the search; 0 disables.
    pub saturation_patience: usize,
    pub survivor_fraction: f64,
    pub crossover_fraction: f64,
    pub mutation_probability: f64,
    /// Coordinate perturbation range, `[-offset, +offset]`.
    pub mutation_offset: usize,
    /// Carry sample weights from one dummy stage to the next.
    pub carry_dummy_weights: bool,
    /// Seed the real stage with the weights leaving the last dummy stage.
    pub carry_weights_into_real_stage: bool,
    pub registry_scope: RegistryScope,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 1000,
            max_iterations: 50,
            dummy_weak_count: 3,
            dedup_iou_threshold: 0.4,
            dedup_enabled: true,
            saturation_epsilon: 0.005,
            saturation_patience: 3,
            survivor_fraction: 0.5,
            crossover_fraction: 0.8,
            mutation_probability: 0.2,
            mutation_offset: 2,
            carry_dummy_weights: true,
            carry_weights_into_real_stage: false,
            registry_scope: RegistryScope::Cascade,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.population_size < 2 {
            return bad(format!("population_size must be >= 2, got {}", self.population_size));
        }
        if self.dummy_weak_count == 0 {
            return bad("dummy_weak_count must be >= 1".into());
        }
        if !(self.dedup_iou_threshold > 0.0 && self.dedup_iou_threshold < 1.0) {
            return bad(format!(
                "dedup_iou_threshold must be in (0, 1), got {}",
                self.dedup_iou_threshold
            ));
        }
        for (name, v) in [
            ("crossover_fraction", self.crossover_fraction),
            ("mutation_probability", self.mutation_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.survivor_fraction > 0.0 && self.survivor_fraction < 1.0) {
            return bad(format!(
                "survivor_fraction must be in (0, 1), got {}",
                self.survivor_fraction
            ));
        }
        Ok(())
    }
}

/// Canonical ids of every feature handed out by random generation.
#[derive(Debug, Clone)]
pub struct UsedFeatureRegistry {
    window_w: usize,
    window_h: usize,
    space: Vec<HaarFeature>,
    used: HashSet<u64>,
    history: Vec<u64>,
}

impl UsedFeatureRegistry {
    pub fn new(window_w: usize, window_h: usize) -> Self {
        Self {
            window_w,
            window_h,
            space: enumerate_features(window_w, window_h),
            used: HashSet::new(),
            history: Vec::new(),
        }
    }

    pub fn window(&self) -> (usize, usize) {
        (self.window_w, self.window_h)
    }

    pub fn space_size(&self) -> usize {
        self.space.len()
    }

    pub fn remaining(&self) -> usize {
        self.space.len() - self.used.len()
    }

    pub fn contains(&self, f: &HaarFeature) -> bool {
        self.used
            .contains(&canonical_id_unchecked(f, self.window_w, self.window_h))
    }

    /// Ids in the order they were registered.
    pub fn history(&self) -> &[u64] {
        &self.history
    }

    fn mark(&mut self, f: &HaarFeature) -> bool {
        let id = canonical_id_unchecked(f, self.window_w, self.window_h);
        if self.used.insert(id) {
            self.history.push(id);
            true
        } else {
            false
        }
    }

    /// Draws `n` distinct, never-drawn features uniformly and registers them.
    ///
    /// Draw order: rejection sampling on uniform indices while unused
    /// features are plentiful; once `n` exceeds half of what remains, the
    /// unused features are listed in enumeration order and sampled by a
    /// partial Fisher-Yates shuffle.
    pub fn draw(&mut self, n: usize, rng: &mut impl Rng) -> Result<Vec<HaarFeature>> {
        let remaining = self.remaining();
        if n > remaining {
            return Err(Error::FeatureSpaceExhausted {
                requested: n,
                remaining,
            });
        }
        let mut out = Vec::with_capacity(n);
        if n * 2 > remaining {
            let mut unused: Vec<HaarFeature> =
                self.space.iter().copied().filter(|f| !self.contains(f)).collect();
            let (picked, _) = unused.partial_shuffle(rng, n);
            out.extend_from_slice(picked);
            for f in &out {
                self.mark(f);
            }
        } else {
            while out.len() < n {
                let f = self.space[rng.gen_range(0..self.space.len())];
                if self.mark(&f) {
                    out.push(f);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<Chromosome>,
    /// Parallel to `members`; zero before the first scoring.
    pub fitness: Vec<f64>,
    pub generation: usize,
}

/// Per-generation trace record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub dedup_drops: usize,
    pub refill_count: usize,
}

/// A random first generation drawn from features not yet in `registry`.
pub fn init_population(
    cfg: &GaConfig,
    registry: &mut UsedFeatureRegistry,
    rng: &mut impl Rng,
) -> Result<Population> {
    let members = registry.draw(cfg.population_size, rng)?;
    Ok(Population {
        fitness: vec![0.0; members.len()],
        members,
        generation: 0,
    })
}

/// Scores every member with a dummy boosting stage.
///
/// Fitness is a member's best split quality over the dummy rounds. Returns
/// the rescored population, the weights to use next (carried or unchanged
/// per `cfg`) and the number of stump fits performed.
pub fn score_population(
    pop: &Population,
    samples: &[Sample],
    w: &WeightVector,
    cfg: &GaConfig,
) -> Result<(Population, WeightVector, u64)> {
    let dummy = train_dummy_stage(&pop.members, samples, cfg.dummy_weak_count, w)?;
    let weights = if cfg.carry_dummy_weights {
        dummy.weights
    } else {
        w.clone()
    };
    Ok((
        Population {
            members: pop.members.clone(),
            fitness: dummy.best_quality,
            generation: pop.generation,
        },
        weights,
        dummy.features_evaluated,
    ))
}

/// Index drawn with probability proportional to fitness; uniform when the
/// wheel carries no mass.
pub fn roulette_index(fitness: &[f64], rng: &mut impl Rng) -> Result<usize> {
    if fitness.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let total: f64 = fitness.iter().map(|f| f.max(0.0)).sum();
    if !total.is_finite() || total <= 0.0 {
        return Ok(rng.gen_range(0..fitness.len()));
    }
    let spin = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, f) in fitness.iter().enumerate() {
        if *f <= 0.0 {
            continue;
        }
        acc += f;
        last_positive = i;
        if spin < acc {
            return Ok(i);
        }
    }
    Ok(last_positive)
}

pub fn roulette_select(pop: &Population, rng: &mut impl Rng) -> Result<Chromosome> {
    Ok(pop.members[roulette_index(&pop.fitness, rng)?])
}

/// Clamps `child` into the window and snaps its size down to its type's
/// block multiple; falls back to `parent` when nothing valid remains.
fn repair(child: HaarFeature, parent: HaarFeature, window_w: usize, window_h: usize) -> HaarFeature {
    let x1 = child.x1.min(window_w);
    let y1 = child.y1.min(window_h);
    if x1 <= child.x || y1 <= child.y {
        return parent;
    }
    let (cx, cy) = child.htype.cells();
    let w = (x1 - child.x) / cx * cx;
    let h = (y1 - child.y) / cy * cy;
    if w == 0 || h == 0 {
        return parent;
    }
    HaarFeature {
        x1: child.x + w,
        y1: child.y + h,
        ..child
    }
}

/// One-point crossover at the lower-right corner: the children exchange
/// `(x1, y1)` and keep their own origin and type.
pub fn crossover(
    a: &Chromosome,
    b: &Chromosome,
    window_w: usize,
    window_h: usize,
) -> (Chromosome, Chromosome) {
    let c1 = HaarFeature {
        x1: b.x1,
        y1: b.y1,
        ..*a
    };
    let c2 = HaarFeature {
        x1: a.x1,
        y1: a.y1,
        ..*b
    };
    (
        repair(c1, *a, window_w, window_h),
        repair(c2, *b, window_w, window_h),
    )
}

/// Types whose block layout fits a `w x h` rectangle after snapping down.
fn suitable_types(w: usize, h: usize) -> Vec<HaarType> {
    HaarType::ALL
        .into_iter()
        .filter(|t| {
            let (cx, cy) = t.cells();
            w >= cx && h >= cy
        })
        .collect()
}

/// Perturbs each corner coordinate with probability `mutation_probability`,
/// then assigns a type suited to the resulting rectangle.
///
/// The type is redrawn (uniformly among suitable types) with the same
/// probability, and always when the current type no longer fits.
pub fn mutate(
    c: &Chromosome,
    cfg: &GaConfig,
    window_w: usize,
    window_h: usize,
    rng: &mut impl Rng,
) -> Chromosome {
    let p = cfg.mutation_probability;
    let off = cfg.mutation_offset as i64;
    let mut coords = [c.x as i64, c.y as i64, c.x1 as i64, c.y1 as i64];
    for v in &mut coords {
        if rng.gen_bool(p) {
            *v += rng.gen_range(-off..=off);
        }
    }
    let (ww, wh) = (window_w as i64, window_h as i64);
    let x = coords[0].clamp(0, ww - 1);
    let y = coords[1].clamp(0, wh - 1);
    let x1 = coords[2].clamp(x + 1, ww);
    let y1 = coords[3].clamp(y + 1, wh);
    let (w, h) = ((x1 - x) as usize, (y1 - y) as usize);

    let suitable = suitable_types(w, h);
    if suitable.is_empty() {
        return *c;
    }
    let redraw = rng.gen_bool(p);
    let htype = if redraw || !suitable.contains(&c.htype) {
        suitable[rng.gen_range(0..suitable.len())]
    } else {
        c.htype
    };
    let (cx, cy) = htype.cells();
    let (x, y) = (x as usize, y as usize);
    HaarFeature {
        x,
        y,
        x1: x + w / cx * cx,
        y1: y + h / cy * cy,
        htype,
    }
}

fn feature_box(f: &HaarFeature) -> BBox {
    BBox::new(f.x as f64, f.y as f64, f.width() as f64, f.height() as f64)
}

/// Outcome counters of a deduplication pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DedupStats {
    pub drops: usize,
    pub refills: usize,
    /// Input indices of the members that survived the spatial comparison,
    /// best first. They lead the output population; refills follow.
    pub kept: Vec<usize>,
}

/// Greedy spatial deduplication in descending fitness (ties in population
/// order), then refill with fresh random features. Refilled members carry
/// fitness 0 until scored.
pub fn dedup_spatial(
    pop: &Population,
    cfg: &GaConfig,
    registry: &mut UsedFeatureRegistry,
    rng: &mut impl Rng,
) -> Result<(Population, DedupStats)> {
    let order = fitness_order(&pop.fitness);
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for i in order {
        let bi = feature_box(&pop.members[i]);
        let redundant = kept
            .iter()
            .any(|&k| iou_unchecked(&bi, &feature_box(&pop.members[k])) > cfg.dedup_iou_threshold);
        if !redundant {
            kept.push(i);
        }
    }
    let drops = pop.members.len() - kept.len();
    let refill_n = cfg.population_size.saturating_sub(kept.len());
    let fresh = registry.draw(refill_n, rng)?;
    let mut members: Vec<Chromosome> = kept.iter().map(|&i| pop.members[i]).collect();
    let mut fitness: Vec<f64> = kept.iter().map(|&i| pop.fitness[i]).collect();
    let stats = DedupStats {
        drops,
        refills: fresh.len(),
        kept,
    };
    fitness.extend(std::iter::repeat_n(0.0, fresh.len()));
    members.extend(fresh);
    Ok((
        Population {
            members,
            fitness,
            generation: pop.generation,
        },
        stats,
    ))
}

/// Indices sorted by fitness, best first; ties keep population order.
fn fitness_order(fitness: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
    order
}

/// Result of a full per-stage search.
#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    /// Distinct features of the final population, in population order.
    pub features: Vec<HaarFeature>,
    /// Weights leaving the last dummy stage.
    pub weights: WeightVector,
    pub trace: Vec<GenerationRecord>,
    pub features_evaluated: u64,
}

/// Generation-by-generation driver of the per-stage search.
///
/// Generations are numbered from 1, the random initial population, and
/// `max_iterations` of them are scored. Each scored generation passes
/// through a dummy stage (advancing the carried weights); newcomers take the
/// fitness measured there while survivors keep the fitness they were
/// selected with, so the best stored fitness never decreases. When an even
/// generation is bred, the survivors and children are spatially deduplicated
/// and topped up with unused random features before scoring.
pub struct Evolution<'a, R: Rng> {
    samples: &'a [Sample],
    cfg: GaConfig,
    registry: &'a mut UsedFeatureRegistry,
    rng: &'a mut R,
    pop: Population,
    carried: Vec<Option<f64>>,
    weights: WeightVector,
    trace: Vec<GenerationRecord>,
    last_dedup: Option<DedupStats>,
    stalled: usize,
    evaluated: u64,
    finished: bool,
}

impl<'a, R: Rng> Evolution<'a, R> {
    pub fn new(
        samples: &'a [Sample],
        w0: &WeightVector,
        cfg: &GaConfig,
        registry: &'a mut UsedFeatureRegistry,
        rng: &'a mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut pop = init_population(cfg, registry, rng)?;
        pop.generation = 1;
        let n = pop.members.len();
        let mut evo = Self {
            samples,
            cfg: cfg.clone(),
            registry,
            rng,
            pop,
            carried: vec![None; n],
            weights: w0.clone(),
            trace: Vec::new(),
            last_dedup: None,
            stalled: 0,
            evaluated: 0,
            finished: cfg.max_iterations == 0,
        };
        if !evo.finished {
            evo.score_generation()?;
        }
        Ok(evo)
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn trace(&self) -> &[GenerationRecord] {
        &self.trace
    }

    /// Deduplication stats of the latest generation, if it was deduplicated.
    pub fn last_dedup(&self) -> Option<&DedupStats> {
        self.last_dedup.as_ref()
    }

    pub fn registry(&self) -> &UsedFeatureRegistry {
        self.registry
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn score_generation(&mut self) -> Result<()> {
        let (scored, weights, n) = score_population(&self.pop, self.samples, &self.weights, &self.cfg)?;
        self.evaluated += n;
        self.weights = weights;
        self.pop.fitness = scored
            .fitness
            .iter()
            .zip(&self.carried)
            .map(|(&fresh, carried)| carried.unwrap_or(fresh))
            .collect();

        let g = self.pop.generation;
        let fitness = &self.pop.fitness;
        let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
        let best = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if let Some(prev) = self.trace.last() {
            let gain = (mean - prev.mean_fitness) / prev.mean_fitness.abs().max(f64::MIN_POSITIVE);
            if gain < self.cfg.saturation_epsilon {
                self.stalled += 1;
            } else {
                self.stalled = 0;
            }
        }
        let (drops, refills) = self.last_dedup.as_ref().map_or((0, 0), |d| (d.drops, d.refills));
        self.trace.push(GenerationRecord {
            generation: g,
            best_fitness: best,
            mean_fitness: mean,
            dedup_drops: drops,
            refill_count: refills,
        });
        log::debug!("generation {g}: best {best:.5} mean {mean:.5} drops {drops} refills {refills}");
        self.finished = g >= self.cfg.max_iterations
            || (self.cfg.saturation_patience > 0 && self.stalled >= self.cfg.saturation_patience);
        Ok(())
    }

    /// Breeds and scores the next generation. Returns `false` once the
    /// stopping rule has fired.
    pub fn step(&mut self) -> Result<bool> {
        if self.finished {
            return Ok(false);
        }
        let n = self.cfg.population_size;
        let (ww, wh) = self.registry.window();
        let order = fitness_order(&self.pop.fitness);
        let survivors = ((n as f64 * self.cfg.survivor_fraction).ceil() as usize).clamp(1, n);

        let mut members: Vec<Chromosome> = Vec::with_capacity(n);
        let mut carried: Vec<Option<f64>> = Vec::with_capacity(n);
        for &i in &order[..survivors] {
            members.push(self.pop.members[i]);
            carried.push(Some(self.pop.fitness[i]));
        }
        while members.len() < n {
            let a = self.pop.members[roulette_index(&self.pop.fitness, self.rng)?];
            let b = self.pop.members[roulette_index(&self.pop.fitness, self.rng)?];
            let (c1, c2) = if self.rng.gen_bool(self.cfg.crossover_fraction) {
                crossover(&a, &b, ww, wh)
            } else {
                (a, b)
            };
            for child in [c1, c2] {
                if members.len() < n {
                    members.push(mutate(&child, &self.cfg, ww, wh, self.rng));
                    carried.push(None);
                }
            }
        }
        let generation = self.pop.generation + 1;
        let fitness = carried.iter().map(|c| c.unwrap_or(0.0)).collect();
        let mut next = Population {
            members,
            fitness,
            generation,
        };
        self.last_dedup = None;
        if self.cfg.dedup_enabled && generation.is_multiple_of(2) {
            let (deduped, stats) = dedup_spatial(&next, &self.cfg, self.registry, self.rng)?;
            carried = stats
                .kept
                .iter()
                .map(|&i| carried[i])
                .chain(std::iter::repeat_n(None, stats.refills))
                .collect();
            next = deduped;
            self.last_dedup = Some(stats);
        }
        self.pop = next;
        self.carried = carried;
        self.score_generation()?;
        Ok(true)
    }

    pub fn finish(self) -> EvolveOutcome {
        let (ww, wh) = self.registry.window();
        let mut seen = HashSet::new();
        let features = self
            .pop
            .members
            .iter()
            .copied()
            .filter(|f| seen.insert(canonical_id_unchecked(f, ww, wh)))
            .collect();
        EvolveOutcome {
            features,
            weights: self.weights,
            trace: self.trace,
            features_evaluated: self.evaluated,
        }
    }
}

/// Runs the search to completion for one stage.
pub fn evolve_stage_population(
    samples: &[Sample],
    w0: &WeightVector,
    cfg: &GaConfig,
    registry: &mut UsedFeatureRegistry,
    rng: &mut impl Rng,
) -> Result<EvolveOutcome> {
    let mut evo = Evolution::new(samples, w0, cfg, registry, rng)?;
    while evo.step()? {}
    Ok(evo.finish())
}
