use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cider::CiderScorer;
use super::ngram::{bleu, meteor, rouge_l};
use super::MetricConfig;
use crate::datapipe::words;
use crate::error::{Error, Result};

pub const AGGREGATE_LABEL: &str = "100 x mean of the four metrics (auxiliary; not the challenge S2)";

/// One entry of an evaluation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPair {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub id: String,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub count: usize,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub aggregate: f64,
    pub aggregate_label: String,
    pub pairs: Vec<PairScores>,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned plain-text table: one row per pair, then the means.
    pub fn to_table(&self) -> String {
        let w = self.pairs.iter().map(|p| p.id.len()).max().unwrap_or(0).max(4);
        let mut out = String::new();
        let _ = writeln!(out, "{:<w$}  {:>8}  {:>8}  {:>8}  {:>8}", "id", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr");
        let row = |out: &mut String, id: &str, b: f64, m: f64, r: f64, c: f64| {
            let _ = writeln!(out, "{id:<w$}  {b:>8.4}  {m:>8.4}  {r:>8.4}  {c:>8.4}");
        };
        for p in &self.pairs {
            row(&mut out, &p.id, p.bleu4, p.meteor, p.rouge_l, p.cider);
        }
        let _ = writeln!(out, "{}", "-".repeat(w + 40));
        row(&mut out, "mean", self.bleu4, self.meteor, self.rouge_l, self.cider);
        let _ = writeln!(out, "{:.4}  {}", self.aggregate, AGGREGATE_LABEL);
        out
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Scores candidate captions against reference sets.
///
/// BLEU clips against all references at once; ROUGE-L and METEOR take the
/// best single reference; CIDEr averages over references. Corpus values are
/// plain means of the per-pair values.
pub fn score_corpus(ids: &[String], candidates: &[String], references: &[Vec<String>], cfg: &MetricConfig) -> Result<ScoreReport> {
    cfg.validate()?;
    if candidates.len() != references.len() || ids.len() != candidates.len() {
        return Err(Error::shape(format!(
            "{} ids, {} candidates, {} reference sets",
            ids.len(),
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("nothing to score"));
    }
    let cands: Vec<Vec<String>> = candidates.iter().map(|c| words(c)).collect();
    let refs: Vec<Vec<Vec<String>>> = references.iter().map(|rs| rs.iter().map(|r| words(r)).collect()).collect();
    if let Some(i) = refs.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("item {} has no references", ids[i])));
    }
    let scorer = CiderScorer::new(&refs, cfg.cider_n, cfg.cider_scale)?;
    let best = |f: &dyn Fn(&[String]) -> f64, rs: &[Vec<String>]| rs.iter().map(|r| f(r)).fold(0.0, f64::max);
    let pairs = ids
        .iter()
        .zip(&cands)
        .zip(&refs)
        .map(|((id, c), rs)| {
            Ok(PairScores {
                id: id.clone(),
                bleu4: bleu(c, rs, cfg.bleu_n, cfg.smoothing)?,
                meteor: best(&|r| meteor(c, r, cfg.meteor_alpha, cfg.meteor_mode), rs),
                rouge_l: best(&|r| rouge_l(c, r, cfg.rouge_beta), rs),
                cider: scorer.score(c, rs),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let b = mean(pairs.iter().map(|p| p.bleu4));
    let m = mean(pairs.iter().map(|p| p.meteor));
    let r = mean(pairs.iter().map(|p| p.rouge_l));
    let c = mean(pairs.iter().map(|p| p.cider));
    Ok(ScoreReport {
        count: pairs.len(),
        bleu4: b,
        meteor: m,
        rouge_l: r,
        cider: c,
        aggregate: 100.0 * (b + m + r + c) / 4.0,
        aggregate_label: AGGREGATE_LABEL.to_string(),
        pairs,
    })
}

pub fn score_pairs(pairs: &[EvalPair], cfg: &MetricConfig) -> Result<ScoreReport> {
    let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let cands: Vec<String> = pairs.iter().map(|p| p.candidate.clone()).collect();
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.references.clone()).collect();
    score_corpus(&ids, &cands, &refs, cfg)
}

/// Reads a JSON list of `{"id", "candidate", "references"}` entries.
pub fn load_eval_pairs(path: impl AsRef<Path>) -> Result<Vec<EvalPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
