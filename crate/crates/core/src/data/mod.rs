//! Documents, annotations, tokenization and model-input construction.

mod packing;
mod schema;
mod synth;
mod types;
mod vocab;

pub use packing::{
    make_example, mask_tokens, pack_sequence, query_text, word_tokens, MlmTargets, PackOptions,
    PackedInput, QueryMode, Segment, TrainingExample, MAX_LEN,
};
pub use schema::{convert_funsd, load_document, serialize_document, FORMAT};
pub use synth::{gen_corpus, gen_synthetic_form, FormStyle, SynthSpec};
pub use types::{
    normalize_box, normalize_coord, BoundingBox, Document, OcrWord, PixelBox, QueryAnnotation,
    PAGE_UNITS,
};
pub use vocab::{
    build_vocab, build_vocab_from_texts, split_pieces, Vocab, MASK_ID, NUM_RESERVED, PAD_ID, UNK_ID,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("ingestion error at {field}: {message}")]
    Ingest { field: String, message: String },
    #[error("document {doc_id}: page dimension is zero")]
    ZeroPage { doc_id: String },
    #[error("invalid bounding box {0}")]
    InvalidBox(String),
    #[error("query has {tokens} tokens, budget is {max}")]
    QueryTooLong { tokens: usize, max: usize },
    #[error("document {doc_id}, annotation {annotation}: no field name (skipped)")]
    MissingFieldName { doc_id: String, annotation: usize },
    #[error("overfull page: {0}")]
    Overfull(String),
    #[error("io: {0}")]
    Io(String),
}

impl DataError {
    pub(crate) fn ingest(field: impl Into<String>, message: impl Into<String>) -> Self {
        DataError::Ingest {
            field: field.into(),
            message: message.into(),
        }
    }
}
