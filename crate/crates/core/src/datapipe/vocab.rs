use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenizer::words;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Domain-specific token inventory. Ids are contiguous from 0; the four
/// specials occupy ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    domain: String,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    domain: String,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from body tokens (specials are prepended).
    pub fn from_tokens(domain: impl Into<String>, body: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(body);
        Self::from_full_list(domain.into(), tokens)
    }

    fn from_full_list(domain: String, tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::invalid("vocabulary must start with <pad>, <bos>, <eos>, <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) || *t != t.to_lowercase() {
                return Err(Error::invalid(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { domain, tokens, index })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of a caption word; specials and unknown words map to `<unk>`.
    pub fn id_of_word(&self, word: &str) -> usize {
        match self.index.get(word) {
            Some(&i) if i >= SPECIALS.len() => i,
            _ => UNK,
        }
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&VocabFile {
            domain: self.domain.clone(),
            tokens: self.tokens.clone(),
        })
        .expect("vocabulary serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(text)?;
        Self::from_full_list(f.domain, f.tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

/// Keeps every corpus token seen at least `min_freq` times, ordered by
/// descending frequency then lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], min_freq: usize, domain: &str) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    if min_freq == 0 {
        return Err(Error::invalid("min_freq must be >= 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for caption in corpus {
        for w in words(caption.as_ref()) {
            if !SPECIALS.contains(&w.as_str()) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(domain, kept.into_iter().map(|(w, _)| w))
}

/// Maps each source id to the target id of the same token, or to the
/// target `<unk>` when the token is absent. Specials map to themselves.
pub fn align_vocabularies(source: &Vocabulary, target: &Vocabulary) -> Vec<usize> {
    source
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            if Vocabulary::is_special(i) {
                i
            } else {
                target.id_of_word(tok)
            }
        })
        .collect()
}
