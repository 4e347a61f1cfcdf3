use std::collections::{HashMap, HashSet};

use super::ngram::ngram_counts;
use crate::error::{Error, Result};

type Gram = Vec<String>;

/// TF-IDF n-gram consensus scorer. Document frequencies come from the
/// reference sets of the whole corpus, one document per item.
#[derive(Clone, Debug)]
pub struct CiderScorer {
    n: usize,
    scale: f64,
    docs: usize,
    df: Vec<HashMap<Gram, usize>>,
}

impl CiderScorer {
    pub fn new(references: &[Vec<Vec<String>>], n: usize, scale: f64) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::invalid("CIDEr needs a non-empty corpus"));
        }
        if n == 0 {
            return Err(Error::invalid("CIDEr order must be >= 1"));
        }
        let mut df = vec![HashMap::new(); n];
        for refs in references {
            for (k, table) in df.iter_mut().enumerate() {
                let seen: HashSet<Gram> = refs.iter().flat_map(|r| ngram_counts(r, k + 1).into_keys()).collect();
                for g in seen {
                    *table.entry(g).or_insert(0) += 1;
                }
            }
        }
        Ok(CiderScorer {
            n,
            scale,
            docs: references.len(),
            df,
        })
    }

    fn vector(&self, tokens: &[String], k: usize) -> HashMap<Gram, f64> {
        ngram_counts(tokens, k + 1)
            .into_iter()
            .map(|(g, tf)| {
                let df = self.df[k].get(&g).copied().unwrap_or(0).max(1);
                let idf = (self.docs as f64 / df as f64).ln();
                (g, tf as f64 * idf)
            })
            .collect()
    }

    /// `scale` times the mean over orders of the cosine similarity between
    /// candidate and reference vectors, averaged over references. A zero
    /// vector on either side scores 0.
    pub fn score(&self, candidate: &[String], references: &[Vec<String>]) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for k in 0..self.n {
            let c = self.vector(candidate, k);
            let cn = c.values().map(|v| v * v).sum::<f64>().sqrt();
            let mut acc = 0.0;
            for r in references {
                let rv = self.vector(r, k);
                let rn = rv.values().map(|v| v * v).sum::<f64>().sqrt();
                if cn > 0.0 && rn > 0.0 {
                    let dot: f64 = c.iter().map(|(g, v)| v * rv.get(g).copied().unwrap_or(0.0)).sum();
                    acc += dot / (cn * rn);
                }
            }
            total += acc / references.len() as f64;
        }
        self.scale * total / self.n as f64
    }
}

/// Per-item CIDEr scores and their mean.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], n: usize, scale: f64) -> Result<(Vec<f64>, f64)> {
    if candidates.len() != references.len() {
        return Err(Error::shape(format!("{} candidates for {} reference sets", candidates.len(), references.len())));
    }
    let scorer = CiderScorer::new(references, n, scale)?;
    let items: Vec<f64> = candidates.iter().zip(references).map(|(c, r)| scorer.score(c, r)).collect();
    let mean = items.iter().sum::<f64>() / items.len() as f64;
    Ok((items, mean))
}
