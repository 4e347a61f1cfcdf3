//! Caption text cleanup: unit formatting and `<unk>` removal.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::{split_pieces, Piece};
use crate::error::{Error, Result};

const UNK_TEXT: &str = "<unk>";

/// Replaces a literal token sequence with `replacement`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriteRule {
    pub pattern: Vec<String>,
    pub replacement: String,
}

impl RewriteRule {
    pub fn new(pattern: &[&str], replacement: &str) -> Self {
        RewriteRule {
            pattern: pattern.iter().map(|s| s.to_string()).collect(),
            replacement: replacement.to_string(),
        }
    }
}

/// Ordered rewrite rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PostprocRules {
    rules: Vec<RewriteRule>,
}

impl Default for PostprocRules {
    fn default() -> Self {
        PostprocRules {
            rules: vec![RewriteRule::new(&["km", "/", "h"], "km/h"), RewriteRule::new(&["m", "/", "s"], "m/s")],
        }
    }
}

impl PostprocRules {
    /// Validates the rules. A replacement may not itself contain any rule's
    /// pattern, which keeps [`normalize_units`] idempotent.
    pub fn new(rules: Vec<RewriteRule>) -> Result<Self> {
        for (i, r) in rules.iter().enumerate() {
            if r.pattern.is_empty() {
                return Err(Error::Format(format!("rule {i}: empty pattern")));
            }
            for tok in &r.pattern {
                let pieces = split_pieces(tok);
                if pieces.len() != 1 || pieces[0].text != tok {
                    return Err(Error::Format(format!("rule {i}: pattern token `{tok}` is not a single token")));
                }
            }
            if r.replacement.trim().is_empty() || r.replacement.contains(UNK_TEXT) {
                return Err(Error::Format(format!("rule {i}: replacement must be non-empty and free of {UNK_TEXT}")));
            }
        }
        let out = PostprocRules { rules };
        for (i, r) in out.rules.iter().enumerate() {
            let pieces = split_pieces(&r.replacement);
            if out.rules.iter().any(|q| find(&pieces, &q.pattern, 0).is_some()) {
                return Err(Error::Format(format!("rule {i}: replacement re-triggers a pattern")));
            }
        }
        Ok(out)
    }

    pub fn rules(&self) -> &[RewriteRule] {
        &self.rules
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("rules serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

fn find(pieces: &[Piece<'_>], pattern: &[String], from: usize) -> Option<usize> {
    (from..pieces.len().saturating_sub(pattern.len() - 1))
        .find(|&i| pieces[i..i + pattern.len()].iter().zip(pattern).all(|(p, t)| p.text == t))
}

fn join(pieces: &[Piece<'_>]) -> String {
    let mut out = String::new();
    for (i, p) in pieces.iter().enumerate() {
        if i > 0 && !p.glued {
            out.push(' ');
        }
        out.push_str(p.text);
    }
    out
}

/// Applies each rule in order, replacing its matches leftmost-first without
/// overlap. Text without any match is returned unchanged.
pub fn normalize_units(text: &str, rules: &PostprocRules) -> String {
    let mut current = text.to_string();
    for rule in &rules.rules {
        let pieces = split_pieces(&current);
        if find(&pieces, &rule.pattern, 0).is_none() {
            continue;
        }
        let mut out: Vec<Piece<'_>> = Vec::with_capacity(pieces.len());
        let mut i = 0;
        while i < pieces.len() {
            match find(&pieces, &rule.pattern, i) {
                Some(j) if j == i => {
                    out.push(Piece {
                        text: &rule.replacement,
                        glued: pieces[i].glued,
                    });
                    i += rule.pattern.len();
                }
                _ => {
                    out.push(pieces[i].clone());
                    i += 1;
                }
            }
        }
        current = join(&out);
    }
    current
}

/// Drops standalone `<unk>` tokens, collapsing the space they leave.
pub fn strip_unknown(text: &str) -> String {
    let pieces = split_pieces(text);
    if !pieces.iter().any(|p| p.text == UNK_TEXT) {
        return text.to_string();
    }
    let kept: Vec<Piece<'_>> = pieces.into_iter().filter(|p| p.text != UNK_TEXT).collect();
    join(&kept)
}

/// Full cleanup applied to generated captions.
pub fn postprocess(text: &str, rules: &PostprocRules) -> String {
    normalize_units(&strip_unknown(text), rules)
}
