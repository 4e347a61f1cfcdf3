use std::collections::HashMap;
use std::hash::Hash;

use super::{MeteorMode, Smoothing, SMOOTHING_EPS};
use crate::error::{Error, Result};

pub(crate) fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut out = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// BLEU with orders `1..=n`, uniform weights, reference-clipped counts and
/// a brevity penalty against the closest reference length (shorter on ties).
pub fn bleu<T: Eq + Hash + Clone>(candidate: &[T], references: &[Vec<T>], n: usize, smoothing: Smoothing) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::invalid("BLEU needs at least one reference"));
    }
    if n == 0 {
        return Err(Error::invalid("BLEU order must be >= 1"));
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let cand = ngram_counts(candidate, k);
        let mut max_ref: HashMap<&Vec<T>, usize> = HashMap::new();
        let ref_counts: Vec<_> = references.iter().map(|r| ngram_counts(r, k)).collect();
        for rc in &ref_counts {
            for (g, &cnt) in rc {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(cnt);
            }
        }
        let total: usize = cand.values().sum();
        let matched: usize = cand.iter().map(|(g, &cnt)| cnt.min(*max_ref.get(g).unwrap_or(&0))).sum();
        let p = match smoothing {
            Smoothing::None if matched == 0 => return Ok(0.0),
            Smoothing::None => matched as f64 / total as f64,
            Smoothing::Epsilon => (matched as f64).max(SMOOTHING_EPS) / total.max(1) as f64,
        };
        log_sum += p.ln() / n as f64;
    }
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = (1.0 - r as f64 / c as f64).exp().min(1.0);
    Ok(bp * log_sum.exp())
}

pub fn bleu4<T: Eq + Hash + Clone>(candidate: &[T], references: &[Vec<T>]) -> Result<f64> {
    bleu(candidate, references, 4, Smoothing::None)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with recall weighted by `beta`.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T], beta: f64) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Exact unigram matches, each reference token used at most once.
pub fn unigram_matches<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T]) -> usize {
    let r = ngram_counts(reference, 1);
    ngram_counts(candidate, 1)
        .iter()
        .map(|(g, &c)| c.min(*r.get(g).unwrap_or(&0)))
        .sum()
}

/// Unigram precision/recall combination; zero when nothing matches.
pub fn meteor<T: Eq + Hash + Clone>(candidate: &[T], reference: &[T], alpha: f64, mode: MeteorMode) -> f64 {
    let m = unigram_matches(candidate, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    match mode {
        MeteorMode::Damped => p * r / (p + alpha * r + (1.0 - alpha)),
        MeteorMode::Fmean => p * r / (alpha * p + (1.0 - alpha) * r),
    }
}
