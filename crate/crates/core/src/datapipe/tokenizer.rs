//! Whitespace tokenizer with punctuation detachment.

use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Characters split off as standalone tokens.
pub const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '"'];

pub fn is_punctuation(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCTUATION.contains(&c))
}

/// A surface token and whether it was glued to the previous token (no
/// whitespace in between).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Piece<'a> {
    pub text: &'a str,
    pub glued: bool,
}

/// Splits on whitespace, then detaches each punctuation character.
/// Case is preserved.
pub fn split_pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut first = true;
        let mut start = 0;
        for (i, c) in word.char_indices() {
            if PUNCTUATION.contains(&c) {
                if start < i {
                    out.push(Piece {
                        text: &word[start..i],
                        glued: !first,
                    });
                    first = false;
                }
                out.push(Piece {
                    text: &word[i..i + c.len_utf8()],
                    glued: !first,
                });
                first = false;
                start = i + c.len_utf8();
            }
        }
        if start < word.len() {
            out.push(Piece {
                text: &word[start..],
                glued: !first,
            });
        }
    }
    out
}

/// Lowercased surface tokens of `text`, without specials.
pub fn words(text: &str) -> Vec<String> {
    split_pieces(text).into_iter().map(|p| p.text.to_lowercase()).collect()
}

/// `<bos>` + token ids + `<eos>`; unknown words map to `<unk>`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    let mut ids = vec![BOS];
    ids.extend(words(text).iter().map(|w| vocab.id_of_word(w)));
    ids.push(EOS);
    ids
}

/// Inverse of [`tokenize`]: drops `<bos>`, `<eos>` and `<pad>`, joins with
/// single spaces and glues punctuation to the preceding word.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let tok = vocab
            .token(id)
            .ok_or_else(|| Error::invalid(format!("token id {id} out of range for vocabulary of {}", vocab.len())))?;
        if id == BOS || id == EOS || id == PAD {
            continue;
        }
        if !out.is_empty() && !is_punctuation(tok) {
            out.push(' ');
        }
        out.push_str(tok);
    }
    Ok(out)
}
