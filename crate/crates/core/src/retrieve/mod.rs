//! Value candidates, prediction and exact-match evaluation.

mod eval;
mod group;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use eval::{evaluate, EvalRecord, EvalReport, GoldQuery, MatchOptions, Predicted, QueryKey};
pub use group::{are_neighbors, group_candidates, GroupParams, ValueCandidate};

use crate::data::{pack_sequence, query_text, DataError, Document, PackOptions, QueryMode, Vocab};
use crate::model::{score_tokens, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrieveError {
    #[error("document {0} has no words")]
    NoCandidates(String),
    #[error("prediction for unknown query {0}")]
    UnknownQuery(String),
    #[error("dataset has no annotated queries")]
    EmptyDataset,
    #[error("field-name queries requested but no annotation has a field name")]
    NoFieldNames,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrieveOptions {
    pub group: GroupParams,
    /// Candidates kept in [`ValuePrediction::all_candidates`].
    pub top_k: usize,
    pub max_len: usize,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        Self {
            group: GroupParams::default(),
            top_k: 5,
            max_len: crate::data::MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePrediction {
    pub doc_id: String,
    pub query: String,
    pub candidate: ValueCandidate,
    /// Best first; `all_candidates[0] == candidate`.
    pub all_candidates: Vec<ValueCandidate>,
    /// Total candidates before truncation to top-k.
    pub num_candidates: usize,
}

/// Pairing score per word, indexed like `doc.words`: the max over the word's
/// tokens, or 0 for a word cut off by the length budget.
pub fn word_scores(
    doc: &Document,
    query: &str,
    params: &ModelParams,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<f64>, RetrieveError> {
    let opts = PackOptions {
        max_len: max_len.min(params.config.max_len),
        pad: false,
    };
    let packed = pack_sequence(&vocab.tokenize(query), &doc.words, vocab, opts)?;
    let tok = score_tokens(params, &packed)?;
    let mut out = vec![0.0f64; doc.words.len()];
    for (s, pos) in tok.iter().zip(&packed.word_pos[packed.ocr_range()]) {
        let p = pos.expect("ocr position has a word");
        out[p] = out[p].max(*s);
    }
    Ok(out)
}

/// Ranking order: higher score, then higher on the page, then further left,
/// then lower first word id.
fn rank(a: &ValueCandidate, b: &ValueCandidate) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.y0.cmp(&b.bbox.y0))
        .then(a.bbox.x0.cmp(&b.bbox.x0))
        .then(a.word_ids[0].cmp(&b.word_ids[0]))
}

/// Scores each candidate with the max of its member word scores and ranks them.
pub fn rank_candidates(doc: &Document, scores: &[f64], group: GroupParams) -> Vec<ValueCandidate> {
    let index = doc.id_index();
    let mut cands = group_candidates(&doc.words, group);
    for c in &mut cands {
        c.score = c
            .word_ids
            .iter()
            .map(|&id| scores[index[id]])
            .fold(f64::NEG_INFINITY, f64::max);
    }
    cands.sort_by(rank);
    cands
}

/// Predicts the value for `query` on `doc`.
pub fn retrieve_value(
    doc: &Document,
    query: &str,
    params: &ModelParams,
    vocab: &Vocab,
    opts: &RetrieveOptions,
) -> Result<ValuePrediction, RetrieveError> {
    if doc.words.is_empty() {
        return Err(RetrieveError::NoCandidates(doc.doc_id.clone()));
    }
    let scores = word_scores(doc, query, params, vocab, opts.max_len)?;
    let mut cands = rank_candidates(doc, &scores, opts.group);
    let num_candidates = cands.len();
    cands.truncate(opts.top_k.max(1));
    Ok(ValuePrediction {
        doc_id: doc.doc_id.clone(),
        query: query.to_string(),
        candidate: cands[0].clone(),
        all_candidates: cands,
        num_candidates,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub retrieve: RetrieveOptions,
    pub matching: MatchOptions,
    /// Abstain when the best candidate scores below this.
    pub min_score: Option<f64>,
}

/// Gold queries of `docs` under `mode`. In field-name mode, annotations
/// without a field name are skipped.
pub fn gold_queries(docs: &[Document], mode: QueryMode) -> Result<Vec<GoldQuery>, RetrieveError> {
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for doc in docs {
        for (k, ann) in doc.annotations.iter().enumerate() {
            match query_text(doc, k, mode) {
                Ok(q) => out.push(GoldQuery {
                    key: QueryKey {
                        doc_id: doc.doc_id.clone(),
                        annotation: k,
                    },
                    query: q.to_string(),
                    answers: ann.value_texts.clone(),
                }),
                Err(DataError::MissingFieldName { .. }) => skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }
    if out.is_empty() {
        return Err(if skipped > 0 {
            RetrieveError::NoFieldNames
        } else {
            RetrieveError::EmptyDataset
        });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} annotations without a field name");
    }
    Ok(out)
}

/// Runs retrieval for every annotated query of `docs` and scores it.
pub fn run_eval(
    params: &ModelParams,
    vocab: &Vocab,
    docs: &[Document],
    mode: QueryMode,
    opts: &EvalOptions,
) -> Result<EvalReport, RetrieveError> {
    let gold = gold_queries(docs, mode)?;
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut predictions = BTreeMap::new();
    for g in &gold {
        let doc = by_id[g.key.doc_id.as_str()];
        let predicted = match retrieve_value(doc, &g.query, params, vocab, &opts.retrieve) {
            Ok(p) => {
                let keep = opts.min_score.is_none_or(|m| p.candidate.score >= m);
                Predicted {
                    text: keep.then(|| p.candidate.text.clone()),
                    candidates: p.num_candidates,
                }
            }
            Err(RetrieveError::NoCandidates(_)) => Predicted {
                text: None,
                candidates: 0,
            },
            Err(e) => return Err(e),
        };
        predictions.insert(g.key.clone(), predicted);
    }
    evaluate(&predictions, &gold, opts.matching)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BoundingBox, OcrWord, PixelBox};

    fn doc(words: &[(&str, [u32; 4])]) -> Document {
        Document {
            doc_id: "t".into(),
            page_width: 1000,
            page_height: 1000,
            words: words
                .iter()
                .enumerate()
                .map(|(i, (t, b))| OcrWord {
                    id: i,
                    text: t.to_string(),
                    bbox: BoundingBox {
                        x0: b[0],
                        y0: b[1],
                        x1: b[2],
                        y1: b[3],
                    },
                    px_box: PixelBox {
                        x0: b[0],
                        y0: b[1],
                        x1: b[2],
                        y1: b[3],
                    },
                })
                .collect(),
            annotations: vec![],
        }
    }

    #[test]
    fn argmax_wins() {
        let d = doc(&[("lo", [0, 0, 10, 10]), ("hi", [0, 500, 10, 510])]);
        let c = rank_candidates(&d, &[0.2, 0.9], GroupParams::default());
        assert_eq!(c[0].text, "hi");
        assert_eq!(c[0].score, 0.9);
    }

    #[test]
    fn ties_prefer_higher_on_page() {
        let d = doc(&[("low", [0, 500, 10, 510]), ("top", [900, 0, 910, 10])]);
        let c = rank_candidates(&d, &[0.5, 0.5], GroupParams::default());
        assert_eq!(c[0].text, "top");
    }

    #[test]
    fn candidate_score_is_member_max() {
        let d = doc(&[
            ("a", [0, 0, 10, 10]),
            ("b", [12, 0, 20, 10]),
            ("c", [500, 0, 510, 10]),
        ]);
        let c = rank_candidates(&d, &[0.1, 0.7, 0.4], GroupParams::default());
        assert_eq!(c[0].text, "a b");
        assert_eq!(c[0].score, 0.7);
        assert_eq!(c[1].score, 0.4);
    }
}
