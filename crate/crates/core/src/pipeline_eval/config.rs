use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{LearningRates, LossWeights};
use crate::tracking::TrackerConfig;

/// Which scale levels the contrastive supervision sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    #[default]
    All,
    /// Only the largest quantile level.
    CoarseOnly,
    /// Only the smallest quantile level.
    FineOnly,
}

/// How rendered features are decoded into language space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    /// Attention over the memory bank.
    #[default]
    Memory,
    /// Plain linear map `W f`, no bank.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub tracker: TrackerConfig,
    pub weights: LossWeights,
    pub learning_rates: LearningRates,
    /// Number of scale levels.
    pub scale_levels: usize,
    /// Pixels sampled per iteration for the semantic losses.
    pub samples: usize,
    pub memory_threshold: f64,
    pub feature_dim: usize,
    pub temperature: f64,
    /// Reference iteration count, shrunk by `desk_scale`.
    pub base_iterations: usize,
    pub desk_scale: f64,
    /// Fixed per-event iteration count; unset splits the budget evenly.
    pub iters_per_event: Option<usize>,
    pub closed_set: bool,
    /// Relative depth noise of the two-view pointmaps used for tracking.
    pub pairwise_noise: f64,
    /// Pixel stride when seeding Gaussians from a keyframe pointmap.
    pub init_stride: usize,
    pub init_min_confidence: f64,
    /// A pixel receives new Gaussians only while rendered transmittance exceeds this.
    pub coverage_transmittance: f64,
    pub max_skip_fraction: f64,
    /// Mask layer used for segmentation labels (0 = parts).
    pub eval_layer: usize,
    /// Every this many held-out frames is evaluated.
    pub eval_stride: usize,
    pub scale_mode: ScaleMode,
    pub decoder: Decoder,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tracker: TrackerConfig::default(),
            weights: LossWeights::default(),
            learning_rates: LearningRates::default(),
            scale_levels: 4,
            samples: 2000,
            memory_threshold: 0.9,
            feature_dim: 16,
            temperature: 1.0,
            base_iterations: 30_000,
            desk_scale: 1.0 / 15.0,
            iters_per_event: None,
            closed_set: false,
            pairwise_noise: 0.0,
            init_stride: 2,
            init_min_confidence: 0.0,
            coverage_transmittance: 0.5,
            max_skip_fraction: 0.2,
            eval_layer: 0,
            eval_stride: 4,
            scale_mode: ScaleMode::All,
            decoder: Decoder::Memory,
        }
    }
}

impl PipelineConfig {
    /// Total optimization iterations after desk scaling.
    pub fn budget(&self) -> usize {
        (self.base_iterations as f64 * self.desk_scale).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.tracker.validate()?;
        self.weights.validate()?;
        self.learning_rates.validate()?;
        if !(self.desk_scale > 0.0 && self.desk_scale <= 1.0) {
            return bad("desk_scale must lie in (0, 1]");
        }
        if self.budget() == 0 {
            return bad("iteration budget must be positive");
        }
        if self.scale_levels == 0 || self.feature_dim == 0 || self.init_stride == 0 || self.eval_stride == 0 {
            return bad("scale_levels, feature_dim, init_stride and eval_stride must be positive");
        }
        if self.samples < 2 {
            return bad("at least two pixels must be sampled");
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be positive");
        }
        if !(-1.0..=1.0).contains(&self.memory_threshold) {
            return bad("memory threshold must be a cosine in [-1, 1]");
        }
        if !(self.pairwise_noise >= 0.0) || !(0.0..=1.0).contains(&self.max_skip_fraction) {
            return bad("pairwise_noise must be non-negative and max_skip_fraction in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.coverage_transmittance) {
            return bad("coverage_transmittance must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_budget_is_desk_sized() {
        assert_eq!(PipelineConfig::default().budget(), 2000);
    }

    #[test]
    fn toml_round_trip_and_partial_override() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = PipelineConfig::from_toml("seed = 5\nscale_mode = \"fine_only\"\n[weights]\ncorr = 0.0\n").unwrap();
        assert_eq!(p.seed, 5);
        assert_eq!(p.scale_mode, ScaleMode::FineOnly);
        assert_eq!(p.weights.corr, 0.0);
        assert_eq!(p.weights.lang, 0.05);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(PipelineConfig::from_toml("desk_scale = 0.0"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("desk_scale = 1.5"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("unknown = 1"), Err(Error::Config(_))));
    }
}
