//! Flat key-value run configuration.

use std::path::{Path, PathBuf};

use gadaboost::bench::DetectParams;
use gadaboost::boost::StageGoal;
use gadaboost::cascade::{TrainConfig, TrainMode};
use gadaboost::ga::{GaConfig, RegistryScope};
use serde::Deserialize;

use crate::UsageError;

pub const SEED_ENV: &str = "GADABOOST_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Ga,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Cascade,
    Stage,
}

/// Every key is optional; missing keys take the library defaults.
/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub positives: Option<PathBuf>,
    pub negatives: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub seed: u64,
    pub threads: Option<usize>,

    pub mode: Mode,
    pub window_w: usize,
    pub window_h: usize,
    pub num_stages: usize,
    pub pos_per_stage: usize,
    pub neg_per_stage: usize,
    pub min_hit_rate: f64,
    pub max_false_alarm: f64,
    pub max_weak_count: usize,
    pub max_harvest_attempts: usize,

    pub population_size: usize,
    pub max_iterations: usize,
    pub dummy_weak_count: usize,
    pub dedup_iou_threshold: f64,
    pub dedup_enabled: bool,
    pub saturation_epsilon: f64,
    pub saturation_patience: usize,
    pub survivor_fraction: f64,
    pub crossover_fraction: f64,
    pub mutation_probability: f64,
    pub mutation_offset: usize,
    pub carry_dummy_weights: bool,
    pub carry_weights_into_real_stage: bool,
    pub registry_scope: Scope,

    pub scale_factor: f64,
    pub step: usize,
    pub min_neighbors: usize,

    pub bench_seeds: Vec<u64>,
    pub bench_iterations: Vec<usize>,
    pub bench_populations: Vec<usize>,
    pub bench_reference_fp: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let ga = GaConfig::default();
        let detect = DetectParams::default();
        Self {
            positives: None,
            negatives: None,
            test_images: None,
            annotations: None,
            seed: train.rng_seed,
            threads: None,
            mode: Mode::Baseline,
            window_w: train.window_w,
            window_h: train.window_h,
            num_stages: train.num_stages,
            pos_per_stage: train.pos_per_stage,
            neg_per_stage: train.neg_per_stage,
            min_hit_rate: train.stage_goal.min_hit_rate,
            max_false_alarm: train.stage_goal.max_false_alarm,
            max_weak_count: train.stage_goal.max_weak_count,
            max_harvest_attempts: train.max_harvest_attempts,
            population_size: ga.population_size,
            max_iterations: ga.max_iterations,
            dummy_weak_count: ga.dummy_weak_count,
            dedup_iou_threshold: ga.dedup_iou_threshold,
            dedup_enabled: ga.dedup_enabled,
            saturation_epsilon: ga.saturation_epsilon,
            saturation_patience: ga.saturation_patience,
            survivor_fraction: ga.survivor_fraction,
            crossover_fraction: ga.crossover_fraction,
            mutation_probability: ga.mutation_probability,
            mutation_offset: ga.mutation_offset,
            carry_dummy_weights: ga.carry_dummy_weights,
            carry_weights_into_real_stage: ga.carry_weights_into_real_stage,
            registry_scope: Scope::Cascade,
            scale_factor: detect.scale_factor,
            step: detect.step,
            min_neighbors: detect.min_neighbors,
            bench_seeds: Vec::new(),
            bench_iterations: vec![20, 50],
            bench_populations: Vec::new(),
            bench_reference_fp: None,
        }
    }
}

impl RunConfig {
    /// Parses and validates a config file, then applies seed overrides:
    /// the `--seed` flag wins over `GADABOOST_SEED`, which wins over the file.
    pub fn load(path: &Path, seed_flag: Option<u64>) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.positives, &mut cfg.negatives, &mut cfg.test_images, &mut cfg.annotations]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Ok(raw) = std::env::var(SEED_ENV) {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("{SEED_ENV} must be an unsigned integer, got {raw:?}")))?;
        }
        if let Some(seed) = seed_flag {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let cfg: Self = toml::from_str(text).map_err(|e| UsageError(e.message().to_string()))?;
        cfg.train_config().validate().map_err(|e| UsageError(e.to_string()))?;
        if cfg.scale_factor <= 1.0 {
            return Err(UsageError(format!("scale_factor must exceed 1, got {}", cfg.scale_factor)));
        }
        if cfg.step == 0 {
            return Err(UsageError("step must be >= 1".into()));
        }
        if cfg.threads == Some(0) {
            return Err(UsageError("threads must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn ga_config(&self) -> GaConfig {
        GaConfig {
            population_size: self.population_size,
            max_iterations: self.max_iterations,
            dummy_weak_count: self.dummy_weak_count,
            dedup_iou_threshold: self.dedup_iou_threshold,
            dedup_enabled: self.dedup_enabled,
            saturation_epsilon: self.saturation_epsilon,
            saturation_patience: self.saturation_patience,
            survivor_fraction: self.survivor_fraction,
            crossover_fraction: self.crossover_fraction,
            mutation_probability: self.mutation_probability,
            mutation_offset: self.mutation_offset,
            carry_dummy_weights: self.carry_dummy_weights,
            carry_weights_into_real_stage: self.carry_weights_into_real_stage,
            registry_scope: match self.registry_scope {
                Scope::Cascade => RegistryScope::Cascade,
                Scope::Stage => RegistryScope::Stage,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            window_w: self.window_w,
            window_h: self.window_h,
            num_stages: self.num_stages,
            pos_per_stage: self.pos_per_stage,
            neg_per_stage: self.neg_per_stage,
            stage_goal: StageGoal {
                min_hit_rate: self.min_hit_rate,
                max_false_alarm: self.max_false_alarm,
                max_weak_count: self.max_weak_count,
            },
            mode: match self.mode {
                Mode::Baseline => TrainMode::Baseline,
                Mode::Ga => TrainMode::Ga(self.ga_config()),
            },
            rng_seed: self.seed,
            max_harvest_attempts: self.max_harvest_attempts,
        }
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            scale_factor: self.scale_factor,
            step: self.step,
            min_neighbors: self.min_neighbors,
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, UsageError> {
        value
            .as_deref()
            .ok_or_else(|| UsageError(format!("config key `{key}` is required for this command")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_library_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.detect_params(), DetectParams::default());
    }

    #[test]
    fn ga_keys_reach_the_train_config() {
        let cfg = RunConfig::parse("mode = \"ga\"\npopulation_size = 200\nmax_iterations = 10\nregistry_scope = \"stage\"\n").unwrap();
        let TrainMode::Ga(ga) = cfg.train_config().mode else {
            panic!("expected ga mode");
        };
        assert_eq!((ga.population_size, ga.max_iterations), (200, 10));
        assert_eq!(ga.registry_scope, RegistryScope::Stage);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("window = 24\n").unwrap_err();
        assert!(err.0.contains("window"), "{}", err.0);
    }

    #[test]
    fn invalid_values_are_rejected_before_any_work() {
        assert!(RunConfig::parse("min_hit_rate = 1.5\n").is_err());
        assert!(RunConfig::parse("mode = \"ga\"\npopulation_size = 0\n").is_err());
        assert!(RunConfig::parse("scale_factor = 1.0\n").is_err());
        assert!(RunConfig::parse("mode = \"boosted\"\n").is_err());
    }
}
