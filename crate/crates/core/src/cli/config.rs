use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{TextRepr, WeightScheme};
use crate::model::ModelConfig;
use crate::training::{TaskParams, TaskSpec, TrainConfig, Variant};

/// `[task]`: extents other than `text_len` come from `[model]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub latent_size: usize,
    /// Defaults to `model.max_text_len`.
    pub text_len: Option<usize>,
    pub noise_std: f64,
    pub caption_sharpness: f64,
    pub seed: u64,
}

impl Default for TaskSection {
    fn default() -> Self {
        let d = TaskParams::default();
        Self {
            latent_size: d.latent_size,
            text_len: None,
            noise_std: d.noise_std,
            caption_sharpness: d.caption_sharpness,
            seed: d.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub eval_interval: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            steps: d.steps,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            eval_interval: d.eval_interval,
            seed: d.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub scheme: WeightScheme,
    pub variant: Variant,
    pub text_repr: TextRepr,
    pub vista_scale: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            scheme: WeightScheme::Normalized,
            variant: Variant::L2,
            text_repr: TextRepr::Embedding,
            vista_scale: 1.0,
        }
    }
}

/// Experiment file with `[task]`, `[model]`, `[train]` and `[loss]`
/// sections. Missing sections and keys take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: TaskSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub loss: LossSection,
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.train_config().validate().map_err(|e| Error::Parse(e.to_string()))?;
        cfg.task_params().check_model(&cfg.model).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn task_params(&self) -> TaskParams {
        TaskParams {
            latent_size: self.task.latent_size,
            vocab_size: self.model.vocab_size,
            text_len: self.task.text_len.unwrap_or(self.model.max_text_len),
            n_image_tokens: self.model.n_image_tokens,
            d_image_feat: self.model.d_image_feat,
            noise_std: self.task.noise_std,
            caption_sharpness: self.task.caption_sharpness,
            seed: self.task.seed,
        }
    }

    pub fn task(&self) -> Result<TaskSpec> {
        TaskSpec::generate(self.task_params())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            scheme: self.loss.scheme,
            variant: self.loss.variant,
            text_repr: self.loss.text_repr,
            vista_scale: self.loss.vista_scale,
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            eval_interval: self.train.eval_interval,
            seed: self.train.seed,
        }
    }
}

/// Lower-case hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
