use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// Named starting points for `model`; explicit `model` keys override them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    Full,
    BddScale,
    Desk,
    Micro,
}

impl ModelPreset {
    fn config(self) -> ModelConfig {
        match self {
            ModelPreset::Full => ModelConfig::default(),
            ModelPreset::BddScale => ModelConfig::bdd_scale(),
            ModelPreset::Desk => ModelConfig::desk(0, 0),
            ModelPreset::Micro => ModelConfig::micro(0, 0),
        }
    }
}

fn default_min_freq() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub annotations: PathBuf,
    pub features: PathBuf,
    /// Vocabulary file; built from the training captions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
}

/// One experiment: a single (domain, agent) cell of the training matrix.
///
/// `model.feature_dim` and `model.vocab_size` are taken from the data and
/// vocabulary; `seed` overrides `train.seed`. Relative paths are resolved
/// against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_preset: Option<ModelPreset>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricConfig,
    pub data: DataPaths,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut raw: Value = serde_json::from_str(text)?;
        let obj = raw.as_object_mut().ok_or_else(|| Error::Config("run config must be a JSON object".into()))?;
        if let Some(p) = obj.get("model_preset") {
            let preset: ModelPreset =
                serde_json::from_value(p.clone()).map_err(|e| Error::Config(format!("model_preset: {e}")))?;
            let mut base = serde_json::to_value(preset.config())?;
            if let Some(overrides) = obj.get("model") {
                let o = overrides.as_object().ok_or_else(|| Error::Config("model must be an object".into()))?;
                let b = base.as_object_mut().expect("config is an object");
                for (k, v) in o {
                    b.insert(k.clone(), v.clone());
                }
            }
            obj.insert("model".into(), base);
        }
        let mut cfg: RunConfig = serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        fix(&mut cfg.data.annotations);
        fix(&mut cfg.data.features);
        if let Some(v) = cfg.data.vocab.as_mut() {
            fix(v);
        }
        fix(&mut cfg.output_dir);
        cfg.train.seed = cfg.seed;
        cfg.train.validate()?;
        cfg.metrics.validate()?;
        if cfg.data.min_freq == 0 {
            return Err(Error::Config("data.min_freq must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json_str(&text, base)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Settings of the `grad-check` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    pub feature_dim: usize,
    pub vocab_size: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            eps: crate::trainer::GRAD_CHECK_EPS,
            tolerance: 1e-4,
            feature_dim: 8,
            vocab_size: 20,
        }
    }
}
