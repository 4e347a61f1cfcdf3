use crate::datapipe::{resample_features, tokenize, Agent, Dataset, Vocabulary, EOS};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::matching::EventTarget;
use crate::model::ModelConfig;

/// One video ready for the loss: resampled features and normalised targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub video_id: String,
    pub features: Tensor,
    pub targets: Vec<EventTarget>,
}

/// Token ids for one caption, truncated so the model can emit it within
/// `max_caption_len` steps (the final id is always `<eos>`).
pub fn caption_tokens(text: &str, vocab: &Vocabulary, max_caption_len: usize) -> Vec<usize> {
    let mut ids = tokenize(text, vocab);
    if ids.len() > max_caption_len + 1 {
        ids.truncate(max_caption_len);
        ids.push(EOS);
    }
    ids
}

/// Resamples every video to `config.t_frames` frames and converts its events
/// to `[0, 1]` segments with tokenized `agent` captions.
///
/// Videos without events carry no training signal and are skipped.
pub fn prepare_examples(
    dataset: &Dataset,
    vocab: &Vocabulary,
    config: &ModelConfig,
    agent: Agent,
) -> Result<Vec<TrainingExample>> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if vocab.len() != config.vocab_size {
        return Err(Error::shape(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let mut out = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let id = &s.annotation.video_id;
        if s.features.dim() != config.feature_dim {
            return Err(Error::shape(format!(
                "video {id}: feature dimension {} but the model expects {}",
                s.features.dim(),
                config.feature_dim
            )));
        }
        if s.annotation.events.is_empty() {
            log::warn!("video {id} has no events; skipped");
            continue;
        }
        let features = resample_features(&s.features, config.t_frames)?.matrix;
        let dur = s.annotation.duration;
        let targets = s
            .annotation
            .events
            .iter()
            .map(|e| EventTarget {
                start: (e.start_time / dur).clamp(0.0, 1.0),
                end: (e.end_time / dur).clamp(0.0, 1.0),
                tokens: caption_tokens(e.caption(agent), vocab, config.max_caption_len),
            })
            .collect();
        out.push(TrainingExample {
            video_id: id.clone(),
            features,
            targets,
        });
    }
    if out.is_empty() {
        return Err(Error::invalid("no video in the dataset has events"));
    }
    Ok(out)
}
