//! Caption scoring: BLEU, ROUGE-L, METEOR and CIDEr over token lists.
//!
//! All scorers compare tokens, never ids. Sentences are split with the
//! same tokenizer as training ([`words`](crate::datapipe::words)).

mod cider;
mod ngram;
mod report;

pub use cider::{cider, CiderScorer};
pub use ngram::{bleu, bleu4, lcs_len, meteor, rouge_l, unigram_matches};
pub use report::{load_eval_pairs, score_corpus, score_pairs, EvalPair, PairScores, ScoreReport, AGGREGATE_LABEL};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeteorMode {
    /// `P·R / (P + α·R + (1 − α))`; equals 0.5 for a perfect match.
    Damped,
    /// Standard harmonic form `P·R / (α·P + (1 − α)·R)`.
    Fmean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// Zero n-gram matches count as `1e-9` instead of zero.
    Epsilon,
}

pub const SMOOTHING_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub bleu_n: usize,
    pub meteor_alpha: f64,
    pub meteor_mode: MeteorMode,
    pub rouge_beta: f64,
    pub cider_n: usize,
    pub cider_scale: f64,
    pub smoothing: Smoothing,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            bleu_n: 4,
            meteor_alpha: 0.9,
            meteor_mode: MeteorMode::Damped,
            rouge_beta: 1.2,
            cider_n: 4,
            cider_scale: 10.0,
            smoothing: Smoothing::None,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bleu_n == 0 || self.cider_n == 0 {
            return Err(Error::Config("n-gram orders must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.meteor_alpha) {
            return Err(Error::Config("meteor_alpha must lie in [0, 1]".into()));
        }
        if !(self.rouge_beta > 0.0) || !(self.cider_scale > 0.0) {
            return Err(Error::Config("rouge_beta and cider_scale must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
