//! Query-driven value retrieval from form-like documents.
//!
//! A query phrase and the OCR words of a document are encoded jointly by a
//! small transformer that sees only 2-D word locations (no reading order).
//! Each word gets a pairing score against the pooled query representation;
//! horizontally adjacent words are grouped into value candidates and the
//! best-scoring candidate is returned.

pub mod data;
pub mod learn;
pub mod model;
pub mod numerics;
pub mod retrieve;
