//! Word-level tokenizer over a closed, fixed lexicon.
//!
//! The synthetic tasks use a small controlled vocabulary, so there is no
//! subword machinery: one token per word, numbers split digit by digit,
//! punctuation split into single-character tokens. Ids are stable for a
//! given word list because construction order is the word-list order.

use std::collections::HashMap;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const EOS_ID: u32 = 2;

/// Continuation token consumed by the implicit generator. Not part of the
/// base vocabulary; added with [`Tokenizer::add_special`] when needed.
pub const COT_TOKEN: &str = "<cot>";

/// Characters that become their own single-char token.
const PUNCT: &[char] = &['.', '?', ',', '(', ')', '+', '-', '*', '/', '='];

#[derive(Debug, Clone)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    /// Build from a word list. Digits and punctuation are always included;
    /// duplicates in `words` are ignored.
    pub fn new(words: &[&str]) -> Self {
        let mut t = Tokenizer {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for special in [PAD, UNK, EOS] {
            t.push(special);
        }
        for d in 0..10u8 {
            t.push(&d.to_string());
        }
        for &p in PUNCT {
            t.push(&p.to_string());
        }
        for w in words {
            let lower = w.to_lowercase();
            t.push(&lower);
        }
        t
    }

    fn push(&mut self, tok: &str) -> u32 {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    /// Add a special token (e.g. an implicit-reasoning marker) and return
    /// its id. Idempotent for an already-present token.
    pub fn add_special(&mut self, tok: &str) -> u32 {
        self.push(tok)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, tok: &str) -> Option<u32> {
        self.index.get(tok).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Split text into the tokenizer's surface forms without id lookup.
    pub fn split(&self, text: &str) -> Vec<String> {
        surface_split(text)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        surface_split(text)
            .iter()
            .map(|w| self.index.get(w).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Inverse of encode up to whitespace: tokens joined by single spaces,
    /// padding skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut parts = Vec::new();
        for &id in ids {
            if id == PAD_ID {
                continue;
            }
            parts.push(self.tokens[id as usize].as_str());
        }
        parts.join(" ")
    }

    /// Decode, stopping before the first end-of-sequence token.
    pub fn decode_until_eos(&self, ids: &[u32]) -> String {
        let end = ids.iter().position(|&id| id == EOS_ID).unwrap_or(ids.len());
        self.decode(&ids[..end])
    }
}

/// Tokenizer-independent surface segmentation: lowercase, whitespace-split,
/// punctuation and digits as single-character tokens, `<...>` specials kept
/// whole. This defines "token count" everywhere text lengths are compared.
pub fn surface_split(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in lower.chars() {
        if ch.is_whitespace() {
            flush(&mut word, &mut out);
        } else if ch.is_ascii_digit() || PUNCT.contains(&ch) {
            flush(&mut word, &mut out);
            out.push(ch.to_string());
        } else if ch == '<' {
            flush(&mut word, &mut out);
            word.push(ch);
        } else if ch == '>' {
            word.push(ch);
            flush(&mut word, &mut out);
        } else {
            word.push(ch);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_split_and_rejoin() {
        let t = Tokenizer::new(&["has", "marbles"]);
        let ids = t.encode("has 145 marbles");
        assert_eq!(ids.len(), 5);
        assert_eq!(t.decode(&ids), "has 1 4 5 marbles");
    }

    #[test]
    fn punctuation_and_unknowns() {
        let t = Tokenizer::new(&["the", "coin"]);
        let ids = t.encode("the zorgon coin.");
        assert_eq!(ids[1], UNK_ID);
        assert_eq!(t.decode(&ids), "the <unk> coin .");
    }

    #[test]
    fn specials_roundtrip() {
        let mut t = Tokenizer::new(&["query"]);
        let cot = t.add_special("<cot>");
        assert_eq!(t.add_special("<cot>"), cot, "add_special is idempotent");
        let ids = t.encode("query <cot> <cot>");
        assert_eq!(ids, vec![t.id("query").unwrap(), cot, cot]);
        let with_eos = [&ids[..], &[EOS_ID, t.id("query").unwrap()]].concat();
        assert_eq!(t.decode_until_eos(&with_eos), "query <cot> <cot>");
    }

    #[test]
    fn casing_is_folded() {
        let t = Tokenizer::new(&["coin", "heads"]);
        assert_eq!(t.encode("Coin HEADS"), t.encode("coin heads"));
    }

    #[test]
    fn ids_are_stable_for_a_fixed_list() {
        let a = Tokenizer::new(&["x", "y", "z"]);
        let b = Tokenizer::new(&["x", "y", "z"]);
        assert_eq!(a.encode("z y x"), b.encode("z y x"));
        assert_eq!(a.vocab_size(), 3 + 10 + PUNCT.len() + 3);
    }
}
