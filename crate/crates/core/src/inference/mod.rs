//! Event selection and dense-caption assembly.

use std::fmt::Write as _;

use crate::datapipe::{detokenize, resample_features, Agent, FeatureSequence, Vocabulary};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::matching::{layer_predictions, match_layer, temporal_iou, EventTarget, LossConfig};
use crate::model::Pdvc;
use crate::postproc::{postprocess, PostprocRules};

/// One selected query: normalised segment, confidence and greedy caption.
#[derive(Clone, Debug, PartialEq)]
pub struct EventPrediction {
    pub query: usize,
    pub center: f64,
    pub width: f64,
    pub confidence: f64,
    /// Greedy ids, ending in `<eos>` unless the length cap was hit.
    pub caption: Vec<usize>,
    pub caption_logprob: f64,
    /// Ranking score: confidence plus λ times the per-token log-probability.
    pub score: f64,
}

impl EventPrediction {
    /// Segment in `[0, 1]`; never empty.
    pub fn segment(&self) -> (f64, f64) {
        clip_segment(self.center, self.width)
    }
}

fn clip_segment(center: f64, width: f64) -> (f64, f64) {
    let c = center.clamp(0.0, 1.0);
    let lo = (center - width / 2.0).clamp(0.0, 1.0);
    let hi = (center + width / 2.0).clamp(0.0, 1.0);
    if hi > lo {
        (lo, hi)
    } else {
        // saturated widths collapse to the clamped centre; keep a sliver
        let eps = 1e-6;
        if c >= 1.0 {
            (1.0 - eps, 1.0)
        } else {
            (c, (c + eps).min(1.0))
        }
    }
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax_count(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

/// Picks the `min(count, n)` best queries by `confidence + λ·caption_score`,
/// ties to the lower index. Returned in rank order.
pub fn rank_queries(confidences: &[f64], caption_scores: &[f64], lambda: f64, count: usize) -> Vec<usize> {
    let score = |i: usize| confidences[i] + if lambda == 0.0 { 0.0 } else { lambda * caption_scores[i] };
    let mut idx: Vec<usize> = (0..confidences.len()).collect();
    idx.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    idx.truncate(count.min(confidences.len()));
    idx
}

/// How many queries [`predict_events_with`] keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// The event counter's most likely count.
    Counter,
    /// Every query, ranked; used when target segments are given.
    AllQueries,
}

/// Runs the model on features already sized `[t_frames, feature_dim]` and
/// returns the events picked by the event counter, best first.
pub fn predict_events(model: &Pdvc, features: &Tensor, lambda: f64) -> Result<Vec<EventPrediction>> {
    predict_events_with(model, features, lambda, Selection::Counter)
}

pub fn predict_events_with(model: &Pdvc, features: &Tensor, lambda: f64, selection: Selection) -> Result<Vec<EventPrediction>> {
    let mut tape = Tape::new();
    let p = model.bind_constant(&mut tape);
    let out = model.forward(&mut tape, &p, features)?;
    let last = *out.last();
    let preds = layer_predictions(&tape, &last);
    let counter = tape.value(out.counter_logits).data().to_vec();
    let count = match selection {
        Selection::Counter => argmax_count(&counter),
        Selection::AllQueries => model.config.num_queries,
    };
    if count == 0 {
        return Ok(Vec::new());
    }
    let n = preds.len();
    let caps = model.generate(&mut tape, &p, last.queries, &(0..n).collect::<Vec<_>>())?;
    let cap_scores: Vec<f64> = caps.iter().map(|c| c.logprob / c.ids.len().max(1) as f64).collect();
    let conf: Vec<f64> = preds.iter().map(|q| q.confidence).collect();
    let chosen = rank_queries(&conf, &cap_scores, lambda, count);
    Ok(chosen
        .into_iter()
        .map(|q| EventPrediction {
            query: q,
            center: preds[q].center,
            width: preds[q].width,
            confidence: preds[q].confidence,
            caption: caps[q].ids.clone(),
            caption_logprob: caps[q].logprob,
            score: conf[q] + lambda * cap_scores[q],
        })
        .collect())
}

/// Resamples a feature file to the model's frame count, then predicts.
pub fn predict_video(model: &Pdvc, features: &FeatureSequence, lambda: f64, selection: Selection) -> Result<Vec<EventPrediction>> {
    let fs = resample_features(features, model.config.t_frames)?;
    predict_events_with(model, &fs.matrix, lambda, selection)
}

/// For each target segment, the index of the prediction whose centre is
/// nearest the target's centre. Ties go to higher confidence, then to the
/// lower query index. Predictions may serve several targets.
pub fn match_proposals_to_segments(preds: &[EventPrediction], targets: &[(f64, f64)]) -> Result<Vec<usize>> {
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to match against segments"));
    }
    Ok(targets
        .iter()
        .map(|&(s, e)| {
            let c = (s + e) / 2.0;
            let mut best = 0;
            for i in 1..preds.len() {
                let (a, b) = (&preds[i], &preds[best]);
                let (da, db) = ((a.center - c).abs(), (b.center - c).abs());
                let better = da < db
                    || (da == db && (a.confidence > b.confidence || (a.confidence == b.confidence && a.query < b.query)));
                if better {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// One rendered event.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseEvent {
    pub start_time: f64,
    pub end_time: f64,
    pub caption: String,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseCaptionOutput {
    pub video_id: String,
    pub agent: Agent,
    pub events: Vec<DenseEvent>,
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

impl DenseCaptionOutput {
    /// Keys in sorted order, times with three decimals, confidences with six.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n  \"agent\": ");
        out.push_str(&json_str(self.agent.as_str()));
        out.push_str(",\n  \"events\": [");
        for (i, e) in self.events.iter().enumerate() {
            out.push_str(if i == 0 { "\n" } else { ",\n" });
            let _ = write!(
                out,
                "    {{\"caption\": {}, \"confidence\": {:.6}, \"end_time\": {:.3}, \"start_time\": {:.3}}}",
                json_str(&e.caption),
                e.confidence,
                e.end_time,
                e.start_time
            );
        }
        if !self.events.is_empty() {
            out.push_str("\n  ");
        }
        out.push_str("],\n  \"video_id\": ");
        out.push_str(&json_str(&self.video_id));
        out.push_str("\n}\n");
        out
    }
}

/// Scales segments by `duration`, detokenizes and cleans captions, and sorts
/// events by start time (then end time, then caption).
pub fn render_output(
    selected: &[EventPrediction],
    video_id: &str,
    agent: Agent,
    duration: f64,
    vocab: &Vocabulary,
    rules: &PostprocRules,
) -> Result<DenseCaptionOutput> {
    let mut events = selected
        .iter()
        .map(|p| {
            let (s, e) = p.segment();
            Ok(DenseEvent {
                start_time: s * duration,
                end_time: e * duration,
                caption: postprocess(&detokenize(&p.caption, vocab)?, rules),
                confidence: p.confidence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    events.sort_by(|a, b| {
        a.start_time
            .total_cmp(&b.start_time)
            .then(a.end_time.total_cmp(&b.end_time))
            .then_with(|| a.caption.cmp(&b.caption))
    });
    Ok(DenseCaptionOutput {
        video_id: video_id.to_string(),
        agent,
        events,
    })
}

/// How well a model reproduces its own training targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    pub events: usize,
    /// Matched events whose greedy caption equals the target exactly.
    pub exact_captions: usize,
    /// Mean temporal IoU between matched predictions and targets.
    pub mean_iou: f64,
}

impl FitReport {
    pub fn caption_accuracy(&self) -> f64 {
        if self.events == 0 {
            0.0
        } else {
            self.exact_captions as f64 / self.events as f64
        }
    }
}

/// Matches the final decoder layer to each video's targets (as in training),
/// greedily decodes the matched queries and compares with the targets.
pub fn fit_report(model: &Pdvc, videos: &[(Tensor, Vec<EventTarget>)], loss: &LossConfig) -> Result<FitReport> {
    let mut r = FitReport::default();
    let mut iou_sum = 0.0;
    for (features, targets) in videos {
        let mut tape = Tape::new();
        let p = model.bind_constant(&mut tape);
        let out = model.forward(&mut tape, &p, features)?;
        let last = *out.last();
        let m = match_layer(&tape, &last, targets, loss)?;
        let preds = layer_predictions(&tape, &last);
        let caps = model.generate(&mut tape, &p, last.queries, &m.queries())?;
        for (&(q, g), cap) in m.pairs.iter().zip(&caps) {
            r.events += 1;
            if cap.ids[..] == targets[g].tokens[1..] {
                r.exact_captions += 1;
            }
            let seg = clip_segment(preds[q].center, preds[q].width);
            iou_sum += temporal_iou(seg, (targets[g].start, targets[g].end));
        }
    }
    if r.events > 0 {
        r.mean_iou = iou_sum / r.events as f64;
    }
    Ok(r)
}
