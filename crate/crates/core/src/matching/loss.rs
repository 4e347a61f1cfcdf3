use serde::{Deserialize, Serialize};

use super::hungarian::{hungarian_match, MatchResult};
use crate::datapipe::PAD;
use crate::diffcore::{sigmoid, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, ForwardOutput, LayerOutput, Pdvc};

const PROB_CLAMP: f64 = 1e-7;

/// Weights of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub giou: f64,
    pub cls: f64,
    pub ec: f64,
    pub cap: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            giou: 2.0,
            cls: 1.0,
            ec: 1.0,
            cap: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("giou", self.giou), ("cls", self.cls), ("ec", self.ec), ("cap", self.cap)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {n} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn combine(&self, giou: f64, cls: f64, ec: f64, cap: f64) -> f64 {
        self.giou * giou + self.cls * cls + self.ec * ec + self.cap * cap
    }
}

/// Loss weights, assignment-cost weights and focal parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub cost_cls: f64,
    pub cost_giou: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            cost_cls: 1.0,
            cost_giou: 2.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(0.0..=1.0).contains(&self.focal_alpha) || !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal alpha must be in [0, 1] and gamma >= 0".into()));
        }
        if !(self.cost_cls.is_finite() && self.cost_giou.is_finite()) {
            return Err(Error::Config("matching cost weights must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub giou: f64,
    pub cls: f64,
    pub ec: f64,
    pub cap: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Entry-wise sum, used to accumulate over a batch.
    pub fn accumulate(&mut self, o: &LossBreakdown) {
        self.giou += o.giou;
        self.cls += o.cls;
        self.ec += o.ec;
        self.cap += o.cap;
        self.total += o.total;
    }

    pub fn scaled(&self, c: f64) -> LossBreakdown {
        LossBreakdown {
            giou: self.giou * c,
            cls: self.cls * c,
            ec: self.ec * c,
            cap: self.cap * c,
            total: self.total * c,
        }
    }
}

/// One ground-truth event: segment in normalised time and its caption ids
/// (`<bos> ... <eos>`).
#[derive(Clone, Debug, PartialEq)]
pub struct EventTarget {
    pub start: f64,
    pub end: f64,
    pub tokens: Vec<usize>,
}

/// Value-level view of one query's localization output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentPrediction {
    pub center: f64,
    pub width: f64,
    pub confidence: f64,
}

impl SegmentPrediction {
    pub fn segment(&self) -> (f64, f64) {
        (self.center - self.width / 2.0, self.center + self.width / 2.0)
    }
}

pub fn layer_predictions(tape: &Tape, layer: &LayerOutput) -> Vec<SegmentPrediction> {
    let c = tape.value(layer.center).data();
    let w = tape.value(layer.width).data();
    let s = tape.value(layer.score).data();
    (0..c.len())
        .map(|i| SegmentPrediction {
            center: c[i],
            width: w[i],
            confidence: sigmoid(s[i]),
        })
        .collect()
}

/// Generalised IoU of two intervals.
pub fn temporal_giou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    if !(a.0 < a.1) || !(b.0 < b.1) {
        return Err(Error::invalid(format!("degenerate segment {a:?} or {b:?}")));
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    let hull = a.1.max(b.1) - a.0.min(b.0);
    Ok(inter / union - (hull - union) / hull)
}

/// Plain IoU of two intervals; zero when either is empty.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0).max(0.0) + (b.1 - b.0).max(0.0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Focal loss of probability `p` against a binary label.
pub fn focal_loss(p: f64, positive: bool, alpha: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(if positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    })
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln() + m;
    row.iter().map(|&x| x - z).collect()
}

/// Mean negative log-likelihood of `targets` under per-step `logits`
/// (`[steps, vocab]`); `<pad>` targets are skipped.
pub fn caption_nll(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    if logits.ndim() != 2 || logits.rows() != targets.len() {
        return Err(Error::shape(format!("{:?} logits for {} targets", logits.shape(), targets.len())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (s, &t) in targets.iter().enumerate() {
        if t == PAD {
            continue;
        }
        if t >= logits.cols() {
            return Err(Error::invalid(format!("target {t} outside vocabulary of {}", logits.cols())));
        }
        sum -= log_softmax_row(logits.row(s))[t];
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// `-ln dist[min(count, max)]` for a distribution over `0..=max`.
pub fn counter_loss(dist: &[f64], true_count: usize) -> f64 {
    let i = true_count.min(dist.len() - 1);
    -dist[i].ln()
}

/// `cost[q][g] = -c_cls * confidence_q + c_giou * (1 - giou(q, g))`.
pub fn matching_cost(preds: &[SegmentPrediction], targets: &[(f64, f64)], c_cls: f64, c_giou: f64) -> Result<Vec<Vec<f64>>> {
    if targets.is_empty() {
        return Err(Error::invalid("matching needs at least one ground-truth event"));
    }
    preds
        .iter()
        .map(|p| {
            targets
                .iter()
                .map(|&g| Ok(c_cls * (-p.confidence) + c_giou * (1.0 - temporal_giou(p.segment(), g)?)))
                .collect()
        })
        .collect()
}

/// Assignment of one decoder layer's queries to `targets`.
pub fn match_layer(tape: &Tape, layer: &LayerOutput, targets: &[EventTarget], cfg: &LossConfig) -> Result<MatchResult> {
    let segs: Vec<(f64, f64)> = targets.iter().map(|t| (t.start, t.end)).collect();
    let cost = matching_cost(&layer_predictions(tape, layer), &segs, cfg.cost_cls, cfg.cost_giou)?;
    hungarian_match(&cost)
}

struct LayerTerms {
    giou: Var,
    cls: Var,
    cap: Var,
}

fn giou_term(tape: &mut Tape, layer: &LayerOutput, m: &MatchResult, targets: &[EventTarget]) -> Result<Var> {
    let rows = m.queries();
    let k = rows.len();
    let c = tape.select(layer.center, &rows)?;
    let w = tape.select(layer.width, &rows)?;
    let half = tape.scale(w, 0.5);
    let s = tape.sub(c, half)?;
    let e = tape.add(c, half)?;
    let gs = tape.constant(Tensor::vector(m.targets().iter().map(|&g| targets[g].start).collect()));
    let ge = tape.constant(Tensor::vector(m.targets().iter().map(|&g| targets[g].end).collect()));

    let lo = tape.maximum(s, gs)?;
    let hi = tape.minimum(e, ge)?;
    let overlap = tape.sub(hi, lo)?;
    let inter = tape.relu(overlap);
    let len_p = tape.sub(e, s)?;
    let len_g = tape.sub(ge, gs)?;
    let both = tape.add(len_p, len_g)?;
    let union = tape.sub(both, inter)?;
    let h_lo = tape.minimum(s, gs)?;
    let h_hi = tape.maximum(e, ge)?;
    let hull = tape.sub(h_hi, h_lo)?;
    let iou = tape.div(inter, union)?;
    let slack = tape.sub(hull, union)?;
    let slack = tape.div(slack, hull)?;
    let giou = tape.sub(iou, slack)?;
    let loss = tape.neg(giou);
    let loss = tape.add_scalar(loss, 1.0);
    let total = tape.sum(loss);
    Ok(tape.scale(total, 1.0 / k as f64))
}

fn focal_term(tape: &mut Tape, score: Var, m: &MatchResult, cfg: &LossConfig) -> Result<Var> {
    let n = tape.shape(score)[0];
    let mut pos_mask = vec![0.0; n];
    for &(q, _) in &m.pairs {
        pos_mask[q] = 1.0;
    }
    let neg_mask: Vec<f64> = pos_mask.iter().map(|y| 1.0 - y).collect();
    let log_p = tape.log_sigmoid(score);
    let ns = tape.neg(score);
    let log_q = tape.log_sigmoid(ns);
    // (1-p)^gamma = exp(gamma * ln(1-p)), p^gamma likewise
    let g_q = tape.scale(log_q, cfg.focal_gamma);
    let mod_pos = tape.exp(g_q);
    let g_p = tape.scale(log_p, cfg.focal_gamma);
    let mod_neg = tape.exp(g_p);
    let pos = tape.mul(mod_pos, log_p)?;
    let pos = tape.scale(pos, -cfg.focal_alpha);
    let neg = tape.mul(mod_neg, log_q)?;
    let neg = tape.scale(neg, -(1.0 - cfg.focal_alpha));
    let pm = tape.constant(Tensor::vector(pos_mask));
    let nm = tape.constant(Tensor::vector(neg_mask));
    let pos = tape.mul(pos, pm)?;
    let neg = tape.mul(neg, nm)?;
    let all = tape.add(pos, neg)?;
    let total = tape.sum(all);
    Ok(tape.scale(total, 1.0 / n as f64))
}

fn caption_term(
    tape: &mut Tape,
    model: &Pdvc,
    p: &Bound,
    layer: &LayerOutput,
    m: &MatchResult,
    targets: &[EventTarget],
) -> Result<Var> {
    let rows = m.queries();
    let seqs: Vec<Vec<usize>> = m.targets().iter().map(|&g| targets[g].tokens.clone()).collect();
    let steps = model.caption_logits(tape, p, layer.queries, &rows, &seqs)?;
    let k = rows.len();
    let vocab = model.config.vocab_size;
    let stacked = tape.concat(&steps, 0)?;
    let logp = tape.log_softmax(stacked, 1)?;
    let mut flat = Vec::new();
    let mut weight = Vec::new();
    for (i, seq) in seqs.iter().enumerate() {
        let counted = seq[1..].iter().filter(|&&t| t != PAD).count().max(1);
        for s in 0..seq.len() - 1 {
            let t = seq[s + 1];
            if t == PAD {
                continue;
            }
            flat.push((s * k + i) * vocab + t);
            weight.push(1.0 / (counted * k) as f64);
        }
    }
    let picked = tape.select(logp, &flat)?;
    let w = tape.constant(Tensor::vector(weight));
    let weighted = tape.mul(picked, w)?;
    let s = tape.sum(weighted);
    Ok(tape.neg(s))
}

fn layer_terms(
    tape: &mut Tape,
    model: &Pdvc,
    p: &Bound,
    layer: &LayerOutput,
    targets: &[EventTarget],
    cfg: &LossConfig,
) -> Result<LayerTerms> {
    let m = match_layer(tape, layer, targets, cfg)?;
    Ok(LayerTerms {
        giou: giou_term(tape, layer, &m, targets)?,
        cls: focal_term(tape, layer.score, &m, cfg)?,
        cap: caption_term(tape, model, p, layer, &m, targets)?,
    })
}

/// Deep-supervised set-prediction loss for one video.
///
/// Each decoder layer is matched independently; its localization,
/// classification and caption terms are summed over layers, while the count
/// term comes from the final layer only. Returns the differentiable total and
/// its value breakdown.
pub fn total_loss(
    tape: &mut Tape,
    model: &Pdvc,
    p: &Bound,
    out: &ForwardOutput,
    targets: &[EventTarget],
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    if targets.is_empty() {
        return Err(Error::invalid("video has no ground-truth events"));
    }
    if out.layers.is_empty() {
        return Err(Error::invalid("no decoder layers"));
    }
    let mut sums: Option<LayerTerms> = None;
    for layer in &out.layers {
        let t = layer_terms(tape, model, p, layer, targets, cfg)?;
        sums = Some(match sums {
            None => t,
            Some(acc) => LayerTerms {
                giou: tape.add(acc.giou, t.giou)?,
                cls: tape.add(acc.cls, t.cls)?,
                cap: tape.add(acc.cap, t.cap)?,
            },
        });
    }
    let sums = sums.expect("at least one layer");

    let count = targets.len().min(model.config.max_count);
    let logp = tape.log_softmax(out.counter_logits, 1)?;
    let picked = tape.select(logp, &[count])?;
    let picked = tape.sum(picked);
    let ec = tape.neg(picked);

    let w = cfg.weights;
    let a = tape.scale(sums.giou, w.giou);
    let b = tape.scale(sums.cls, w.cls);
    let c = tape.scale(ec, w.ec);
    let d = tape.scale(sums.cap, w.cap);
    let ab = tape.add(a, b)?;
    let abc = tape.add(ab, c)?;
    let total = tape.add(abc, d)?;

    let item = |v: Var| tape.value(v).data()[0];
    let breakdown = LossBreakdown {
        giou: item(sums.giou),
        cls: item(sums.cls),
        ec: item(ec),
        cap: item(sums.cap),
        total: item(total),
    };
    Ok((total, breakdown))
}
