//! Single-document JSON configuration.
//!
//! Resolution order, lowest to highest: preset values, `paper_defaults`, explicitly written
//! nested fields. A value changed under `paper_defaults` therefore reaches every nested
//! setting it governs unless that setting is also spelled out.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use parereg_core::estimator::{EstimatorConfig, EstimatorKind};
use parereg_core::metrics::MetricThresholds;
use parereg_core::pipeline::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result, StageExt};
use crate::scene::{OracleSpec, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Indoor,
    Outdoor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Training {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub lr_decay_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    pub voxel_size: f64,
    pub gaussian_noise: f64,
    /// Largest rotation angle, radians.
    pub rotation: f64,
    pub scale: Option<[f64; 2]>,
    pub translation: Option<f64>,
    pub crop_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub neighbors: usize,
    pub weight_matrices: usize,
    pub coarse_matches: usize,
    pub fine_matches: usize,
    pub acceptance_radius: f64,
}

/// Published hyperparameters for the two dataset families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaperDefaults {
    pub training: Training,
    pub augmentation: Augmentation,
    pub network: Network,
}

impl PaperDefaults {
    pub fn indoor() -> Self {
        Self {
            training: Training {
                batch_size: 1,
                learning_rate: 1e-4,
                epochs: 40,
                weight_decay: 1e-6,
                lr_decay: 0.95,
                lr_decay_step: 1,
            },
            augmentation: Augmentation {
                voxel_size: 0.025,
                gaussian_noise: 0.005,
                rotation: TAU,
                scale: None,
                translation: None,
                crop_ratio: 0.3,
            },
            network: Network {
                neighbors: 35,
                weight_matrices: 4,
                coarse_matches: 256,
                fine_matches: 1000,
                acceptance_radius: 0.1,
            },
        }
    }

    pub fn outdoor() -> Self {
        let mut d = Self::indoor();
        d.training.epochs = 100;
        d.training.lr_decay_step = 4;
        d.augmentation.voxel_size = 0.3;
        d.augmentation.gaussian_noise = 0.01;
        d.augmentation.scale = Some([0.8, 1.1]);
        d.augmentation.translation = Some(2.0);
        d.network.acceptance_radius = 0.6;
        d
    }

    /// `(JSON pointer into the config, value)` for every nested setting these defaults govern.
    /// Training values and the scale range have no runtime consumer.
    fn bindings(&self) -> Vec<(&'static str, Value)> {
        let a = &self.augmentation;
        let n = &self.network;
        let mut out = vec![
            ("/model/backbone/k", n.neighbors.into()),
            ("/model/backbone/kernels", n.weight_matrices.into()),
            ("/model/backbone/voxel", a.voxel_size.into()),
            ("/model/matching/coarse_matches", n.coarse_matches.into()),
            ("/model/matching/fine_matches", n.fine_matches.into()),
            ("/estimator/acceptance_radius", n.acceptance_radius.into()),
            ("/scene/noise", a.gaussian_noise.into()),
            ("/scene/crop_ratio", a.crop_ratio.into()),
            ("/scene/rotation_max", a.rotation.into()),
        ];
        if let Some(t) = a.translation {
            out.push(("/scene/translation_max", t.into()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub pairs: usize,
    pub estimators: Vec<EstimatorKind>,
    pub budgets: Vec<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            pairs: 200,
            estimators: vec![EstimatorKind::Feature, EstimatorKind::Ransac, EstimatorKind::Lgr],
            budgets: vec![1, 10, 100, 1000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub preset: Preset,
    pub paper_defaults: PaperDefaults,
    pub model: ModelConfig,
    pub estimator: EstimatorConfig,
    pub metrics: MetricThresholds,
    pub scene: SceneSpec,
    pub oracle: OracleSpec,
    pub benchmark: BenchmarkConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self::preset(Preset::Indoor)
    }
}

impl AppConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Indoor => Self {
                preset: p,
                paper_defaults: PaperDefaults::indoor(),
                model: ModelConfig::indoor(),
                estimator: EstimatorConfig::indoor(),
                metrics: MetricThresholds::indoor(),
                scene: SceneSpec::indoor(),
                oracle: OracleSpec::indoor(),
                benchmark: BenchmarkConfig::default(),
            },
            Preset::Outdoor => Self {
                preset: p,
                paper_defaults: PaperDefaults::outdoor(),
                model: ModelConfig::outdoor(),
                estimator: EstimatorConfig::outdoor(),
                metrics: MetricThresholds::outdoor(),
                scene: SceneSpec::outdoor(),
                oracle: OracleSpec::outdoor(),
                benchmark: BenchmarkConfig::default(),
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| CliError::input(format!("config: {e}")))?;
        Self::resolve(&user)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text =
                    fs::read_to_string(p).map_err(|e| CliError::input(format!("config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn resolve(user: &Value) -> Result<Self> {
        if !user.is_object() {
            return Err(CliError::input("config: top level must be a JSON object"));
        }
        let preset: Preset = match user.get("preset") {
            None => Preset::Indoor,
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::input(format!("config.preset: {e}")))?,
        };
        let mut merged = serde_json::to_value(Self::preset(preset)).expect("config serialises");
        merge(&mut merged, user);
        let defaults: PaperDefaults = serde_json::from_value(merged["paper_defaults"].clone())
            .map_err(|e| CliError::input(format!("config.paper_defaults: {e}")))?;
        for (pointer, value) in defaults.bindings() {
            if user.pointer(pointer).is_none() {
                *merged
                    .pointer_mut(pointer)
                    .expect("binding targets exist in every preset") = value;
            }
        }
        let cfg: Self = serde_json::from_value(merged).map_err(|e| CliError::input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.backbone.validate().stage("config.model.backbone")?;
        self.model.matching.context.validate().stage("config.model.matching")?;
        if self.model.matching.coarse_matches == 0 || self.model.matching.fine_matches == 0 {
            return Err(CliError::input("config.model.matching: match counts must be positive"));
        }
        self.estimator.validate().stage("config.estimator")?;
        self.scene.validate()?;
        self.oracle.validate()?;
        if self.benchmark.budgets.contains(&0) {
            return Err(CliError::input("config.benchmark: budgets must be positive"));
        }
        Ok(())
    }
}

/// Recursive object merge; non-object values in `over` replace those in `base`.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
