//! The `fqdoc/1` document file format and the FUNSD converter.
//!
//! Boxes in files are in source pixel units; normalization happens on load.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::types::{normalize_box, Document, OcrWord, PixelBox, QueryAnnotation};
use super::DataError;

pub const FORMAT: &str = "fqdoc/1";

#[derive(Debug, Serialize, Deserialize)]
struct FileWord {
    id: usize,
    text: String,
    #[serde(rename = "box")]
    bbox: [u32; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct FileAnnotation {
    key_text: String,
    field_name: Option<String>,
    answers: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileDocument {
    format: String,
    doc_id: String,
    page_width: u32,
    page_height: u32,
    words: Vec<FileWord>,
    annotations: Vec<FileAnnotation>,
}

fn field<'a>(obj: &'a Value, path: &str, key: &str) -> Result<&'a Value, DataError> {
    obj.get(key)
        .ok_or_else(|| DataError::ingest(format!("{path}{key}"), "missing"))
}

fn as_str(v: &Value, path: &str) -> Result<String, DataError> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| DataError::ingest(path, "expected a string"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, DataError> {
    v.as_array()
        .ok_or_else(|| DataError::ingest(path, "expected an array"))
}

fn as_uint(v: &Value, path: &str) -> Result<u64, DataError> {
    if let Some(u) = v.as_u64() {
        return Ok(u);
    }
    match v.as_i64() {
        Some(i) if i < 0 => Err(DataError::ingest(path, format!("negative coordinate {i}"))),
        _ => Err(DataError::ingest(path, "expected a non-negative integer")),
    }
}

fn as_u32(v: &Value, path: &str) -> Result<u32, DataError> {
    let u = as_uint(v, path)?;
    u32::try_from(u).map_err(|_| DataError::ingest(path, "value too large"))
}

/// Parses and validates an `fqdoc/1` file, then normalizes its boxes.
pub fn load_document(bytes: &[u8]) -> Result<Document, DataError> {
    let root: Value = serde_json::from_slice(bytes)
        .map_err(|e| DataError::ingest("<root>", format!("malformed JSON: {e}")))?;
    if !root.is_object() {
        return Err(DataError::ingest("<root>", "expected an object"));
    }
    if let Some(fmt) = root.get("format") {
        let fmt = as_str(fmt, "format")?;
        if fmt != FORMAT {
            return Err(DataError::ingest(
                "format",
                format!("unsupported format {fmt:?}"),
            ));
        }
    }
    let doc_id = as_str(field(&root, "", "doc_id")?, "doc_id")?;
    let page_width = as_u32(field(&root, "", "page_width")?, "page_width")?;
    let page_height = as_u32(field(&root, "", "page_height")?, "page_height")?;
    if page_width == 0 || page_height == 0 {
        return Err(DataError::ZeroPage { doc_id });
    }

    let mut words = Vec::new();
    for (i, w) in as_array(field(&root, "", "words")?, "words")?
        .iter()
        .enumerate()
    {
        let p = format!("words[{i}].");
        let id = as_uint(field(w, &p, "id")?, &format!("{p}id"))? as usize;
        let text = as_str(field(w, &p, "text")?, &format!("{p}text"))?;
        let coords = as_array(field(w, &p, "box")?, &format!("{p}box"))?;
        if coords.len() != 4 {
            return Err(DataError::ingest(
                format!("{p}box"),
                "expected 4 coordinates",
            ));
        }
        let mut c = [0u32; 4];
        for (k, v) in coords.iter().enumerate() {
            c[k] = as_u32(v, &format!("{p}box[{k}]"))?;
        }
        if c[0] > c[2] || c[1] > c[3] {
            return Err(DataError::ingest(format!("{p}box"), "x0 > x1 or y0 > y1"));
        }
        let px_box = PixelBox {
            x0: c[0],
            y0: c[1],
            x1: c[2],
            y1: c[3],
        };
        words.push(OcrWord {
            id,
            text,
            bbox: normalize_box(&px_box, page_width, page_height),
            px_box,
        });
    }

    let mut doc = Document {
        doc_id,
        page_width,
        page_height,
        words,
        annotations: Vec::new(),
    };
    // Word invariants first so that answer resolution can trust the ids.
    doc.validate()?;

    let empty = Vec::new();
    let anns = match root.get("annotations") {
        None | Some(Value::Null) => &empty,
        Some(a) => as_array(a, "annotations")?,
    };
    let index = doc.id_index();
    for (k, a) in anns.iter().enumerate() {
        let p = format!("annotations[{k}].");
        let key_text = as_str(field(a, &p, "key_text")?, &format!("{p}key_text"))?;
        let field_name = match a.get("field_name") {
            None | Some(Value::Null) => None,
            Some(v) => Some(as_str(v, &format!("{p}field_name"))?),
        };
        let mut value_word_ids = Vec::new();
        let mut value_texts = Vec::new();
        for (j, ans) in as_array(field(a, &p, "answers")?, &format!("{p}answers"))?
            .iter()
            .enumerate()
        {
            let ap = format!("{p}answers[{j}]");
            let mut ids = Vec::new();
            for v in as_array(ans, &ap)? {
                let id = as_uint(v, &ap)? as usize;
                if index.get(id).is_none_or(|&pos| pos == usize::MAX) {
                    return Err(DataError::ingest(
                        ap.clone(),
                        format!("dangling reference to word {id}"),
                    ));
                }
                ids.push(id);
            }
            if ids.is_empty() {
                return Err(DataError::ingest(ap, "empty answer"));
            }
            value_texts.push(doc.join_words(&ids).expect("ids checked above"));
            value_word_ids.push(ids);
        }
        doc.annotations.push(QueryAnnotation {
            key_text,
            field_name,
            value_word_ids,
            value_texts,
        });
    }
    Ok(doc)
}

/// Serializes to `fqdoc/1`, writing pixel boxes.
pub fn serialize_document(doc: &Document) -> Result<Vec<u8>, DataError> {
    let file = FileDocument {
        format: FORMAT.to_string(),
        doc_id: doc.doc_id.clone(),
        page_width: doc.page_width,
        page_height: doc.page_height,
        words: doc
            .words
            .iter()
            .map(|w| FileWord {
                id: w.id,
                text: w.text.clone(),
                bbox: w.px_box.as_array(),
            })
            .collect(),
        annotations: doc
            .annotations
            .iter()
            .map(|a| FileAnnotation {
                key_text: a.key_text.clone(),
                field_name: a.field_name.clone(),
                answers: a.value_word_ids.clone(),
            })
            .collect(),
    };
    serde_json::to_vec_pretty(&file).map_err(|e| DataError::Io(e.to_string()))
}

#[derive(Debug, Deserialize)]
struct FunsdWord {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct FunsdEntity {
    id: usize,
    #[serde(default)]
    text: String,
    label: String,
    #[serde(default)]
    words: Vec<FunsdWord>,
    #[serde(default)]
    linking: Vec<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
struct FunsdFile {
    form: Vec<FunsdEntity>,
}

/// Converts a FUNSD annotation file to a [`Document`].
///
/// Every non-empty word of every entity becomes an OCR word, in entity
/// order. Each question entity linked to one or more answer entities yields
/// one annotation whose acceptable answers are those entities' words. FUNSD
/// files do not record the page size; when it is not supplied it is taken
/// as the maximum word extent.
pub fn convert_funsd(
    bytes: &[u8],
    doc_id: &str,
    page_size: Option<(u32, u32)>,
) -> Result<Document, DataError> {
    let file: FunsdFile = serde_json::from_slice(bytes)
        .map_err(|e| DataError::ingest("<funsd>", format!("malformed FUNSD JSON: {e}")))?;

    let mut words = Vec::new();
    let mut entity_words: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for ent in &file.form {
        let mut ids = Vec::new();
        for (k, w) in ent.words.iter().enumerate() {
            let text = w.text.trim();
            if text.is_empty() {
                continue;
            }
            if w.bbox.iter().any(|&c| c < 0.0 || !c.is_finite()) {
                return Err(DataError::ingest(
                    format!("form[id={}].words[{k}].box", ent.id),
                    "negative coordinate",
                ));
            }
            let r = |v: f64| v.round() as u32;
            let px_box = PixelBox {
                x0: r(w.bbox[0].min(w.bbox[2])),
                y0: r(w.bbox[1].min(w.bbox[3])),
                x1: r(w.bbox[0].max(w.bbox[2])),
                y1: r(w.bbox[1].max(w.bbox[3])),
            };
            let id = words.len();
            ids.push(id);
            words.push(OcrWord {
                id,
                text: text.to_string(),
                bbox: Default::default(),
                px_box,
            });
        }
        entity_words.insert(ent.id, ids);
    }

    let (page_width, page_height) = match page_size {
        Some(p) => p,
        None => (
            words.iter().map(|w| w.px_box.x1).max().unwrap_or(1).max(1),
            words.iter().map(|w| w.px_box.y1).max().unwrap_or(1).max(1),
        ),
    };

    let by_id: std::collections::HashMap<usize, &FunsdEntity> =
        file.form.iter().map(|e| (e.id, e)).collect();
    let mut doc = Document {
        doc_id: doc_id.to_string(),
        page_width,
        page_height,
        words,
        annotations: Vec::new(),
    };
    doc.normalize_boxes()?;

    for ent in &file.form {
        if ent.label != "question" || entity_words[&ent.id].is_empty() {
            continue;
        }
        let mut answers: Vec<Vec<usize>> = Vec::new();
        for &[from, to] in &ent.linking {
            if from != ent.id {
                continue;
            }
            let Some(target) = by_id.get(&to) else {
                return Err(DataError::ingest(
                    format!("form[id={}].linking", ent.id),
                    format!("dangling reference to entity {to}"),
                ));
            };
            if target.label != "answer" {
                continue;
            }
            let ids = &entity_words[&to];
            if !ids.is_empty() && !answers.contains(ids) {
                answers.push(ids.clone());
            }
        }
        if answers.is_empty() {
            continue;
        }
        let key_words = &entity_words[&ent.id];
        let key_text = if ent.text.trim().is_empty() {
            doc.join_words(key_words).unwrap_or_default()
        } else {
            ent.text.trim().to_string()
        };
        let value_texts = answers
            .iter()
            .map(|ids| doc.join_words(ids).expect("ids come from this document"))
            .collect();
        doc.annotations.push(QueryAnnotation {
            key_text,
            field_name: None,
            value_word_ids: answers,
            value_texts,
        });
    }
    doc.validate()?;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "doc_id": "d1", "page_width": 1000, "page_height": 1000,
        "words": [
            {"id": 0, "text": "Date:", "box": [10, 10, 60, 20]},
            {"id": 1, "text": "01/02/2020", "box": [80, 10, 180, 20]}
        ],
        "annotations": [{"key_text": "Date:", "field_name": "date", "answers": [[1]]}]
    }"#;

    #[test]
    fn minimal_file_loads() {
        let doc = load_document(MINIMAL.as_bytes()).unwrap();
        assert_eq!(doc.words.len(), 2);
        assert_eq!(doc.annotations.len(), 1);
        assert_eq!(doc.annotations[0].value_texts, vec!["01/02/2020"]);
    }

    #[test]
    fn dangling_reference_is_named() {
        let bad = MINIMAL.replace("[[1]]", "[[7]]");
        let err = load_document(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("dangling reference"), "{err}");
        assert!(err.contains("annotations[0].answers[0]"), "{err}");
    }

    #[test]
    fn negative_coordinate_is_named() {
        let bad = MINIMAL.replace("[10, 10, 60, 20]", "[-10, 10, 60, 20]");
        let err = load_document(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("words[0].box[0]"), "{err}");
        assert!(err.contains("negative"), "{err}");
    }

    #[test]
    fn malformed_json() {
        let err = load_document(b"{not json").unwrap_err().to_string();
        assert!(err.contains("malformed JSON"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let bad = MINIMAL.replace(r#""id": 1"#, r#""id": 0"#);
        assert!(load_document(bad.as_bytes()).is_err());
    }

    #[test]
    fn file_order_is_kept() {
        let swapped = r#"{
            "doc_id": "d", "page_width": 100, "page_height": 100,
            "words": [
                {"id": 1, "text": "b", "box": [50, 0, 60, 10]},
                {"id": 0, "text": "a", "box": [0, 0, 10, 10]}
            ],
            "annotations": [{"key_text": "k", "field_name": null, "answers": [[0, 1]]}]
        }"#;
        let doc = load_document(swapped.as_bytes()).unwrap();
        assert_eq!(doc.words[0].text, "b");
        assert_eq!(doc.annotations[0].value_texts, vec!["a b"]);
        assert_eq!(doc.words[0].bbox.as_array(), [500, 0, 600, 100]);
    }
}
