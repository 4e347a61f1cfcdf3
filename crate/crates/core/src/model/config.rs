use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyper-parameters.
///
/// [`ModelConfig::default`] is the full-scale configuration; [`desk`] and
/// [`micro`] shrink it for CPU training and gradient checking.
///
/// [`desk`]: ModelConfig::desk
/// [`micro`]: ModelConfig::micro
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub points: usize,
    pub levels: usize,
    pub num_queries: usize,
    pub max_count: usize,
    pub vocab_size: usize,
    pub max_caption_len: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Every video is resampled to this many frames.
    pub t_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 512,
            d_model: 512,
            d_ffn: 2048,
            enc_layers: 2,
            dec_layers: 4,
            heads: 8,
            points: 4,
            levels: 4,
            num_queries: 10,
            max_count: 10,
            vocab_size: 1000,
            max_caption_len: 200,
            lstm_hidden: 512,
            lstm_layers: 1,
            t_frames: 128,
        }
    }
}

impl ModelConfig {
    /// Large-source-domain variant: six decoder layers.
    pub fn bdd_scale() -> Self {
        ModelConfig {
            dec_layers: 6,
            ..Self::default()
        }
    }

    /// CPU-sized configuration used for the synthetic experiments.
    pub fn desk(feature_dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            feature_dim,
            d_model: 64,
            d_ffn: 128,
            enc_layers: 1,
            dec_layers: 2,
            heads: 8,
            points: 4,
            levels: 4,
            num_queries: 10,
            max_count: 10,
            vocab_size,
            max_caption_len: 200,
            lstm_hidden: 64,
            lstm_layers: 1,
            t_frames: 16,
        }
    }

    /// Smallest configuration that still exercises every component.
    pub fn micro(feature_dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            feature_dim,
            d_model: 16,
            d_ffn: 24,
            enc_layers: 1,
            dec_layers: 2,
            heads: 2,
            points: 2,
            levels: 2,
            num_queries: 3,
            max_count: 10,
            vocab_size,
            max_caption_len: 12,
            lstm_hidden: 8,
            lstm_layers: 1,
            t_frames: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.levels == 0 || self.points == 0 {
            return fail("levels and points must be >= 1".into());
        }
        if self.t_frames < 1 << (self.levels - 1) {
            return fail(format!("t_frames {} too short for {} levels", self.t_frames, self.levels));
        }
        if self.lstm_layers != 1 {
            return fail(format!("only single-layer captioners are supported, got {}", self.lstm_layers));
        }
        if self.vocab_size <= crate::datapipe::SPECIALS.len() {
            return fail(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if self.num_queries == 0 || self.feature_dim == 0 || self.d_ffn == 0 || self.lstm_hidden == 0 {
            return fail("num_queries, feature_dim, d_ffn and lstm_hidden must be >= 1".into());
        }
        if self.max_caption_len == 0 {
            return fail("max_caption_len must be >= 1".into());
        }
        Ok(())
    }

    /// Temporal length of each pyramid level.
    pub fn level_sizes(&self) -> Vec<usize> {
        (0..self.levels).map(|l| self.t_frames >> l).collect()
    }
}
