//! Run configuration: world, training and selection sections, loadable from
//! TOML with every default overridable.

use serde::{Deserialize, Serialize};

use crate::classifier::PromptTemplate;
use crate::error::{Error, Result};
use crate::model::BoxKind;
use crate::selection::{AngleTransform, SelectionConfig, Strategy};

/// Background mode tag (the learnable vector itself lives in the head).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundMode {
    Zero,
    NormalizedMean,
    #[default]
    Learnable,
}

/// Optimization, flow weighting and augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Supervised flow weight.
    pub alpha: f64,
    /// Unsupervised (localization-teacher) flow weight.
    pub beta: f64,
    /// Queue flow weight.
    pub gamma: f64,
    pub ema_momentum: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Objectness gate for teacher pseudo boxes.
    pub rpn_keep_threshold: f64,
    /// External-teacher probability gate.
    pub p0: f64,
    pub iterations: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub batch_queue: usize,
    pub seed: u64,
    /// Include the regression term in the queue flow.
    pub queue_regression: bool,
    /// Fraction of iterations before queue sampling starts.
    pub burn_in_fraction: f64,
    pub background: BackgroundMode,
    pub template: PromptTemplate,
    /// Weak augmentation: feature noise and box jitter fraction.
    pub weak_noise: f64,
    pub weak_box_jitter: f64,
    /// Strong augmentation: feature noise and mask rate.
    pub strong_noise: f64,
    pub strong_mask_rate: f64,
    /// Temperature of the external-teacher head.
    pub external_tau: f64,
    /// Jitter-variance gate for regression pseudo targets.
    pub variance_filter_threshold: f64,
    pub threads: usize,
    /// Fraction of the labeled split actually used.
    pub label_fraction: f64,
    pub init_scale: f64,
    pub log_every: usize,
    pub queue_capacity: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 2.0,
            gamma: 1.0,
            ema_momentum: 0.999,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            rpn_keep_threshold: 0.95,
            p0: 0.8,
            iterations: 400,
            batch_labeled: 6,
            batch_unlabeled: 4,
            batch_queue: 2,
            seed: 0,
            queue_regression: false,
            burn_in_fraction: 0.1,
            background: BackgroundMode::Learnable,
            template: PromptTemplate::Photo,
            weak_noise: 0.1,
            weak_box_jitter: 0.0,
            strong_noise: 0.5,
            strong_mask_rate: 0.1,
            external_tau: 0.07,
            variance_filter_threshold: 0.05,
            threads: 1,
            label_fraction: 1.0,
            init_scale: 0.05,
            log_every: 1,
            queue_capacity: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::Config(format!(
                "ema_momentum must be in [0,1), got {}",
                self.ema_momentum
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::Config(format!("p0 must be in [0,1], got {}", self.p0)));
        }
        if self.strong_noise < self.weak_noise || self.weak_noise < 0.0 {
            return Err(Error::Config(
                "augmentation noise must satisfy strong >= weak >= 0".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.batch_labeled == 0 {
            return Err(Error::Config("batch_labeled must be positive".into()));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label_fraction must be in (0,1], got {}",
                self.label_fraction
            )));
        }
        if !(self.external_tau > 0.0) {
            return Err(Error::Config("external_tau must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.burn_in_fraction) {
            return Err(Error::Config("burn_in_fraction must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Synthetic world parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub base_categories: usize,
    pub novel_categories: usize,
    /// Distance of each class mean from the origin (per-axis placement).
    pub mean_scale: f64,
    /// Isotropic feature noise.
    pub feature_noise: f64,
    /// Norm of the per-object identity offset.
    pub identity_scale: f64,
    pub scene_size: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub labeled_images: usize,
    pub unlabeled_images: usize,
    pub test_images: usize,
    pub proposals_per_object: usize,
    pub background_proposals: usize,
    /// Proposal noise for base-category objects (fraction of size).
    pub base_box_noise: f64,
    /// Proposal noise for novel-category objects; larger values emulate the
    /// recall bias against novel objects.
    pub novel_box_noise: f64,
    /// Noise on external-teacher visual features.
    pub clip_noise: f64,
    pub rpn_sharpness: f64,
    pub rpn_midpoint: f64,
    pub rpn_noise: f64,
    /// Noise on the geometry channel of region features.
    pub geometry_noise: f64,
    pub box_kind: BoxKind,
    pub min_box_size: f64,
    pub max_box_size: f64,
    /// Alignment of the visual manifold with each prompt template
    /// (name / article / satellite-photo / photo).
    pub template_affinity: [f64; 4],
    pub seed: u64,
    pub category_names: Option<Vec<String>>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            feature_dim: 16,
            embed_dim: 24,
            base_categories: 6,
            novel_categories: 3,
            mean_scale: 8.0,
            feature_noise: 1.0,
            identity_scale: 2.0,
            scene_size: 1024.0,
            objects_min: 2,
            objects_max: 4,
            labeled_images: 60,
            unlabeled_images: 120,
            test_images: 60,
            proposals_per_object: 3,
            background_proposals: 2,
            base_box_noise: 0.08,
            novel_box_noise: 0.32,
            clip_noise: 0.15,
            rpn_sharpness: 12.0,
            rpn_midpoint: 0.55,
            rpn_noise: 0.02,
            geometry_noise: 0.05,
            box_kind: BoxKind::Horizontal,
            min_box_size: 40.0,
            max_box_size: 120.0,
            template_affinity: [0.15, 0.2, 0.25, 0.4],
            seed: 0,
            category_names: None,
        }
    }
}

impl WorldConfig {
    pub fn n_categories(&self) -> usize {
        self.base_categories + self.novel_categories
    }

    pub fn validate(&self) -> Result<()> {
        let geometry_dims = 5;
        if self.feature_dim < self.n_categories() + geometry_dims {
            return Err(Error::Config(format!(
                "feature_dim {} too small for {} categories plus {geometry_dims} geometry dims",
                self.feature_dim,
                self.n_categories()
            )));
        }
        if self.base_categories == 0 || self.novel_categories == 0 {
            return Err(Error::Config("need at least one base and one novel category".into()));
        }
        if !(self.feature_noise > 0.0) {
            return Err(Error::Config("feature_noise must be positive".into()));
        }
        if self.objects_min == 0 || self.objects_max < self.objects_min {
            return Err(Error::Config("invalid objects_min/objects_max range".into()));
        }
        if self.labeled_images == 0 || self.unlabeled_images == 0 || self.test_images == 0 {
            return Err(Error::Config("every split needs at least one image".into()));
        }
        if !(self.min_box_size > 0.0 && self.max_box_size >= self.min_box_size) {
            return Err(Error::Config("invalid box size range".into()));
        }
        if self.scene_size < 2.0 * self.max_box_size {
            return Err(Error::Config("scene_size too small for the box sizes".into()));
        }
        if let Some(names) = &self.category_names {
            if names.len() != self.n_categories() {
                return Err(Error::Config(format!(
                    "{} category names given for {} categories",
                    names.len(),
                    self.n_categories()
                )));
            }
        }
        Ok(())
    }
}

/// One ablation axis with its cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "kebab-case")]
pub enum AblationSpec {
    LossWeights(Vec<[f64; 3]>),
    Background(Vec<BackgroundMode>),
    Template(Vec<PromptTemplate>),
    LabelFraction(Vec<f64>),
    Strategy(Vec<Strategy>),
    AngleTransform(Vec<AngleTransform>),
}

impl AblationSpec {
    pub fn len(&self) -> usize {
        match self {
            AblationSpec::LossWeights(v) => v.len(),
            AblationSpec::Background(v) => v.len(),
            AblationSpec::Template(v) => v.len(),
            AblationSpec::LabelFraction(v) => v.len(),
            AblationSpec::Strategy(v) => v.len(),
            AblationSpec::AngleTransform(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub ablation: Option<AblationSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        self.selection
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.check_strategy_kind(self.selection.strategy)?;
        Ok(())
    }

    fn check_strategy_kind(&self, strategy: Strategy) -> Result<()> {
        let oriented = matches!(self.world.box_kind, BoxKind::Oriented);
        let ok = match strategy {
            Strategy::Rpn => true,
            Strategy::Rjv | Strategy::Bjv => !oriented,
            Strategy::Sjv | Strategy::Ajv | Strategy::AjvSjv => oriented,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "strategy {strategy:?} does not apply to {:?} worlds",
                self.world.box_kind
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_with_overrides() {
        let text = r#"
[world]
labeled_images = 10
unlabeled_images = 20
test_images = 5
seed = 42

[train]
alpha = 1.0
beta = 0.0
gamma = 0.0
iterations = 50

[selection]
strategy = "bjv"
keep = { top-k = 4 }
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.world.labeled_images, 10);
        assert_eq!(cfg.train.beta, 0.0);
        assert_eq!(cfg.selection.strategy, Strategy::Bjv);
        assert_eq!(cfg.selection.m, 10, "unset fields keep defaults");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.train.ema_momentum = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.train.weak_noise = 0.9; // above strong_noise
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.world.feature_dim = 4;
        assert!(cfg.validate().is_err());

        // Oriented-only strategy on a horizontal world.
        let mut cfg = RunConfig::default();
        cfg.selection.strategy = Strategy::Sjv;
        assert!(cfg.validate().is_err());

        assert!(RunConfig::from_toml("als;kdjf = [").is_err());
    }

    #[test]
    fn ablation_section_parses() {
        let text = r#"
[ablation]
axis = "loss-weights"
values = [[1.0, 1.0, 1.0], [2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        match cfg.ablation {
            Some(AblationSpec::LossWeights(cells)) => assert_eq!(cells.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
