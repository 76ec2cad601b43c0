//! Response shapes shared by the CLI and the HTTP service.

use serde::{Deserialize, Serialize};

use formquery_core::data::Document;
use formquery_core::learn::Checkpoint;
use formquery_core::retrieve::{retrieve_value, RetrieveError, RetrieveOptions, ValueCandidate};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCandidate {
    pub text: String,
    pub box_norm: [u32; 4],
    pub box_px: [u32; 4],
    pub score: f64,
    pub word_ids: Vec<usize>,
}

impl From<&ValueCandidate> for ApiCandidate {
    fn from(c: &ValueCandidate) -> Self {
        Self {
            text: c.text.clone(),
            box_norm: c.bbox.as_array(),
            box_px: c.px_box.as_array(),
            score: c.score,
            word_ids: c.word_ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveRequest {
    pub doc_id: String,
    pub query: String,
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub schema_version: u32,
    pub doc_id: String,
    pub query: String,
    pub prediction: ApiCandidate,
    /// Best first; the first entry is the prediction.
    pub candidates: Vec<ApiCandidate>,
}

/// Runs one query. The CLI and the service both go through here, so their
/// outputs agree byte for byte.
pub fn answer(
    ckpt: &Checkpoint,
    doc: &Document,
    query: &str,
    top_k: Option<usize>,
) -> Result<RetrieveResponse, RetrieveError> {
    let opts = RetrieveOptions {
        top_k: top_k.unwrap_or(DEFAULT_TOP_K).max(1),
        max_len: ckpt.params.config.max_len,
        ..Default::default()
    };
    let pred = retrieve_value(doc, query, &ckpt.params, &ckpt.vocab, &opts)?;
    Ok(RetrieveResponse {
        schema_version: SCHEMA_VERSION,
        doc_id: pred.doc_id,
        query: pred.query,
        prediction: (&pred.candidate).into(),
        candidates: pred.all_candidates.iter().map(Into::into).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub doc_id: String,
    pub page_width: u32,
    pub page_height: u32,
    pub word_count: usize,
    pub has_image: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiWord {
    pub id: usize,
    pub text: String,
    pub box_norm: [u32; 4],
    pub box_px: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiQuery {
    pub key_text: String,
    pub field_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentDetail {
    pub schema_version: u32,
    pub doc_id: String,
    pub page_width: u32,
    pub page_height: u32,
    pub words: Vec<ApiWord>,
    /// Suggested queries taken from the annotations.
    pub queries: Vec<ApiQuery>,
    pub image: Option<String>,
}

impl DocumentDetail {
    pub fn new(doc: &Document, image: Option<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            doc_id: doc.doc_id.clone(),
            page_width: doc.page_width,
            page_height: doc.page_height,
            words: doc
                .words
                .iter()
                .map(|w| ApiWord {
                    id: w.id,
                    text: w.text.clone(),
                    box_norm: w.bbox.as_array(),
                    box_px: w.px_box.as_array(),
                })
                .collect(),
            queries: doc
                .annotations
                .iter()
                .map(|a| ApiQuery {
                    key_text: a.key_text.clone(),
                    field_name: a.field_name.clone(),
                })
                .collect(),
            image,
        }
    }
}
