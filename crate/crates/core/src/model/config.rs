use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the toy multimodal decoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Image tokens prefixed to every text sequence.
    pub n_image_tokens: usize,
    pub max_text_len: usize,
    /// Width of the frozen image features fed to the connector.
    pub d_image_feat: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            n_image_tokens: 8,
            max_text_len: 16,
            d_image_feat: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_image_tokens", self.n_image_tokens),
            ("max_text_len", self.max_text_len),
            ("d_image_feat", self.d_image_feat),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
            if v > u32::MAX as usize {
                return Err(Error::Parameter(format!("{name} does not fit in 32 bits")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Parameter(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Hidden width of the feed-forward sublayers.
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    /// Longest sequence the position table covers.
    pub fn max_seq_len(&self) -> usize {
        self.n_image_tokens + self.max_text_len
    }
}
