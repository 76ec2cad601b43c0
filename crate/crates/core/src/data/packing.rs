use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{split_pieces, Vocab, MASK_ID, NUM_RESERVED, PAD_ID, UNK_ID};
use super::{BoundingBox, DataError, Document, OcrWord};

/// Joint sequence budget for query plus OCR tokens.
pub const MAX_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Query,
    Ocr,
    Pad,
}

/// Which annotation text is used as the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    ExactKey,
    FieldName,
}

impl std::str::FromStr for QueryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact-key" => Ok(Self::ExactKey),
            "field-name" => Ok(Self::FieldName),
            other => Err(format!(
                "unknown query mode {other:?} (exact-key|field-name)"
            )),
        }
    }
}

/// Model input: `[query tokens][OCR tokens][PAD…]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedInput {
    pub token_ids: Vec<u32>,
    pub boxes: Vec<BoundingBox>,
    pub segments: Vec<Segment>,
    /// For OCR positions, the position in `Document::words` of the source word.
    pub word_pos: Vec<Option<usize>>,
    /// Query token count (M).
    pub query_len: usize,
    /// OCR token count (N).
    pub ocr_len: usize,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Positions that carry real tokens.
    pub fn content_len(&self) -> usize {
        self.query_len + self.ocr_len
    }

    pub fn ocr_range(&self) -> std::ops::Range<usize> {
        self.query_len..self.query_len + self.ocr_len
    }

    /// Copy without trailing padding.
    pub fn trimmed(&self) -> PackedInput {
        let n = self.content_len();
        PackedInput {
            token_ids: self.token_ids[..n].to_vec(),
            boxes: self.boxes[..n].to_vec(),
            segments: self.segments[..n].to_vec(),
            word_pos: self.word_pos[..n].to_vec(),
            query_len: self.query_len,
            ocr_len: self.ocr_len,
        }
    }

    /// Appends padding up to `len` positions.
    pub fn pad_to(&mut self, len: usize) {
        while self.token_ids.len() < len {
            self.token_ids.push(PAD_ID);
            self.boxes.push(BoundingBox::PAD);
            self.segments.push(Segment::Pad);
            self.word_pos.push(None);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackOptions {
    pub max_len: usize,
    /// Pad to exactly `max_len` (batched training layout).
    pub pad: bool,
}

impl Default for PackOptions {
    fn default() -> Self {
        Self {
            max_len: MAX_LEN,
            pad: false,
        }
    }
}

/// Token ids of one OCR word. A word whose text has no pieces becomes one UNK.
pub fn word_tokens(word: &OcrWord, vocab: &Vocab) -> Vec<u32> {
    let ids: Vec<u32> = split_pieces(&word.text)
        .iter()
        .map(|p| vocab.id(p))
        .collect();
    if ids.is_empty() {
        vec![UNK_ID]
    } else {
        ids
    }
}

/// Packs the query and OCR words into one sequence.
///
/// OCR words keep their order; tokens past the budget are dropped from the
/// end. Every token of a word carries the word's box; query tokens carry
/// [`BoundingBox::QUERY`].
pub fn pack_sequence(
    query_ids: &[u32],
    words: &[OcrWord],
    vocab: &Vocab,
    opts: PackOptions,
) -> Result<PackedInput, DataError> {
    if query_ids.len() > opts.max_len {
        return Err(DataError::QueryTooLong {
            tokens: query_ids.len(),
            max: opts.max_len,
        });
    }
    let budget = opts.max_len - query_ids.len();
    let mut p = PackedInput {
        token_ids: query_ids.to_vec(),
        boxes: vec![BoundingBox::QUERY; query_ids.len()],
        segments: vec![Segment::Query; query_ids.len()],
        word_pos: vec![None; query_ids.len()],
        query_len: query_ids.len(),
        ocr_len: 0,
    };
    'outer: for (pos, w) in words.iter().enumerate() {
        for id in word_tokens(w, vocab) {
            if p.ocr_len == budget {
                break 'outer;
            }
            p.token_ids.push(id);
            p.boxes.push(w.bbox);
            p.segments.push(Segment::Ocr);
            p.word_pos.push(Some(pos));
            p.ocr_len += 1;
        }
    }
    if opts.pad {
        p.pad_to(opts.max_len);
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub packed: PackedInput,
    /// One label per OCR token; every token of a word shares the word's label.
    pub labels: Vec<f64>,
    pub doc_id: String,
    pub query: String,
    /// Set when no answer word survived packing.
    pub negative: bool,
}

/// The query text an annotation yields under `mode`.
pub fn query_text(doc: &Document, ann_index: usize, mode: QueryMode) -> Result<&str, DataError> {
    let ann = &doc.annotations[ann_index];
    match mode {
        QueryMode::ExactKey => Ok(&ann.key_text),
        QueryMode::FieldName => ann
            .field_name
            .as_deref()
            .ok_or(DataError::MissingFieldName {
                doc_id: doc.doc_id.clone(),
                annotation: ann_index,
            }),
    }
}

/// Builds a labelled example for one annotation.
///
/// Returns [`DataError::MissingFieldName`] in field-name mode when the
/// annotation has no field name; callers treat it as skip-with-warning.
pub fn make_example(
    doc: &Document,
    ann_index: usize,
    mode: QueryMode,
    vocab: &Vocab,
    opts: PackOptions,
) -> Result<TrainingExample, DataError> {
    let query = query_text(doc, ann_index, mode)?.to_string();
    let ann = &doc.annotations[ann_index];
    let index = doc.id_index();
    let mut positive = vec![false; doc.words.len()];
    for ids in &ann.value_word_ids {
        for &id in ids {
            match index.get(id) {
                Some(&pos) if pos != usize::MAX => positive[pos] = true,
                _ => {
                    return Err(DataError::ingest(
                        format!("{}: annotations[{ann_index}]", doc.doc_id),
                        format!("dangling reference to word {id}"),
                    ))
                }
            }
        }
    }
    let packed = pack_sequence(&vocab.tokenize(&query), &doc.words, vocab, opts)?;
    let labels: Vec<f64> = packed.word_pos[packed.ocr_range()]
        .iter()
        .map(|p| {
            if positive[p.expect("ocr token")] {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let negative = !labels.iter().any(|&y| y > 0.0);
    Ok(TrainingExample {
        packed,
        labels,
        doc_id: doc.doc_id.clone(),
        query,
        negative,
    })
}

/// Masked-LM targets: (position, original token id).
pub type MlmTargets = Vec<(usize, u32)>;

/// Selects each non-PAD position with probability `rate`. A selected
/// position becomes `[MASK]` 80% of the time, a uniformly drawn content
/// token 10%, and stays unchanged 10%.
pub fn mask_tokens<R: Rng + ?Sized>(
    packed: &PackedInput,
    rate: f64,
    vocab_size: usize,
    rng: &mut R,
) -> (PackedInput, MlmTargets) {
    assert!((0.0..=1.0).contains(&rate), "mask rate must be in [0, 1]");
    let mut out = packed.clone();
    let mut targets = Vec::new();
    for (i, seg) in packed.segments.iter().enumerate() {
        if *seg == Segment::Pad {
            continue;
        }
        if !rng.random_bool(rate) {
            continue;
        }
        targets.push((i, packed.token_ids[i]));
        let r: f64 = rng.random();
        if r < 0.8 {
            out.token_ids[i] = MASK_ID;
        } else if r < 0.9 && vocab_size > NUM_RESERVED {
            out.token_ids[i] = rng.random_range(NUM_RESERVED as u32..vocab_size as u32);
        }
    }
    (out, targets)
}
