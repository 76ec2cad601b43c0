use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Document;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const NUM_RESERVED: usize = 3;

const RESERVED: [&str; NUM_RESERVED] = ["[PAD]", "[UNK]", "[MASK]"];

/// Splits text into lowercase word pieces.
///
/// Runs of alphanumeric characters form one piece; every other
/// non-whitespace character is a piece of its own.
pub fn split_pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Word-level vocabulary with reserved `[PAD]`, `[UNK]`, `[MASK]` at ids 0..3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_tokens(r.tokens)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.tokens }
    }
}

impl Vocab {
    /// Builds a vocabulary from content tokens; reserved entries are prepended.
    pub fn from_content<I: IntoIterator<Item = String>>(content: I) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(content);
        Self::from_tokens(tokens)
    }

    /// Full token list including the reserved entries.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercases, splits, and maps out-of-vocabulary pieces to `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_pieces(text).iter().map(|p| self.id(p)).collect()
    }
}

/// Frequency-ranked vocabulary over the OCR words of `corpus`.
/// Ties are broken lexicographically; at most `max_size` entries in total.
pub fn build_vocab<'a, I>(corpus: I, max_size: usize) -> Vocab
where
    I: IntoIterator<Item = &'a Document>,
{
    build_vocab_from_texts(
        corpus
            .into_iter()
            .flat_map(|d| d.words.iter().map(|w| w.text.as_str())),
        max_size,
    )
}

/// Like [`build_vocab`], over arbitrary texts.
pub fn build_vocab_from_texts<'a, I>(texts: I, max_size: usize) -> Vocab
where
    I: IntoIterator<Item = &'a str>,
{
    assert!(
        max_size > NUM_RESERVED,
        "max_size must exceed the reserved entries"
    );
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for p in split_pieces(text) {
            *counts.entry(p).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_RESERVED);
    Vocab::from_content(ranked.into_iter().map(|(t, _)| t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BoundingBox, OcrWord, PixelBox};

    fn doc_of(text: &str) -> Document {
        let words = text
            .split_whitespace()
            .enumerate()
            .map(|(i, t)| OcrWord {
                id: i,
                text: t.to_string(),
                bbox: BoundingBox::default(),
                px_box: PixelBox {
                    x0: 0,
                    y0: 0,
                    x1: 0,
                    y1: 0,
                },
            })
            .collect();
        Document {
            doc_id: "v".into(),
            page_width: 1,
            page_height: 1,
            words,
            annotations: vec![],
        }
    }

    #[test]
    fn ordering_by_frequency() {
        let v = build_vocab([&doc_of("a a b")], 100);
        assert_eq!(v.tokens(), &["[PAD]", "[UNK]", "[MASK]", "a", "b"]);
    }

    #[test]
    fn lexicographic_tie_break() {
        let v = build_vocab([&doc_of("y x y x")], 100);
        assert_eq!(&v.tokens()[3..], &["x", "y"]);
    }

    #[test]
    fn cap_maps_rest_to_unk() {
        let v = build_vocab([&doc_of("a a b c d e")], 4);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("e"), UNK_ID);
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(split_pieces("Total Amount:"), vec!["total", "amount", ":"]);
        assert!(split_pieces("").is_empty());
        assert_eq!(split_pieces("fax#123"), vec!["fax", "#", "123"]);
        assert_eq!(
            split_pieces("$1,234.56"),
            vec!["$", "1", ",", "234", ".", "56"]
        );
        let v = build_vocab([&doc_of("total amount :")], 100);
        assert_eq!(
            v.tokenize("Total Amount:"),
            vec![v.id("total"), v.id("amount"), v.id(":")]
        );
        assert_eq!(v.tokenize("Grand"), vec![UNK_ID]);
    }

    #[test]
    fn reserved_ids_survive_serde() {
        let v = build_vocab([&doc_of("q r s")], 100);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.token(PAD_ID), Some("[PAD]"));
        assert_eq!(back.token(MASK_ID), Some("[MASK]"));
    }
}
