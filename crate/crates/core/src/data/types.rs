use serde::{Deserialize, Serialize};

use super::DataError;

/// Side length of the normalized page.
pub const PAGE_UNITS: u32 = 1000;

/// Box in normalized page units, `0 ≤ x0 ≤ x1 ≤ 1000` and likewise for y.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    /// Location assigned to every query token.
    pub const QUERY: BoundingBox = BoundingBox {
        x0: 0,
        y0: 0,
        x1: PAGE_UNITS,
        y1: PAGE_UNITS,
    };
    pub const PAD: BoundingBox = BoundingBox {
        x0: 0,
        y0: 0,
        x1: 0,
        y1: 0,
    };

    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, DataError> {
        let b = Self { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.x0 > self.x1 || self.y0 > self.y1 || self.x1 > PAGE_UNITS || self.y1 > PAGE_UNITS {
            return Err(DataError::InvalidBox(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// Box in the source page's pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn union(&self, other: &PixelBox) -> PixelBox {
        PixelBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

/// One recognized word. `bbox` is normalized; `px_box` keeps the source units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrWord {
    pub id: usize,
    pub text: String,
    pub bbox: BoundingBox,
    pub px_box: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAnnotation {
    /// The key as printed on the page.
    pub key_text: String,
    /// Abstract item name, e.g. `total_amount`.
    pub field_name: Option<String>,
    /// Each inner list is one acceptable answer, as word ids.
    pub value_word_ids: Vec<Vec<usize>>,
    /// `value_texts[k]` is the space-joined text of `value_word_ids[k]`.
    pub value_texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub page_width: u32,
    pub page_height: u32,
    /// Words in file order. Ids are a permutation of `0..words.len()`.
    pub words: Vec<OcrWord>,
    pub annotations: Vec<QueryAnnotation>,
}

/// Scales one pixel coordinate to page units, rounding half up and clamping.
pub fn normalize_coord(v: u32, dim: u32) -> u32 {
    let num = 2 * v as u64 * PAGE_UNITS as u64 + dim as u64;
    let scaled = num / (2 * dim as u64);
    scaled.min(PAGE_UNITS as u64) as u32
}

pub fn normalize_box(px: &PixelBox, page_width: u32, page_height: u32) -> BoundingBox {
    BoundingBox {
        x0: normalize_coord(px.x0, page_width),
        y0: normalize_coord(px.y0, page_height),
        x1: normalize_coord(px.x1, page_width),
        y1: normalize_coord(px.y1, page_height),
    }
}

impl Document {
    /// Recomputes every normalized box from its pixel box.
    pub fn normalize_boxes(&mut self) -> Result<(), DataError> {
        if self.page_width == 0 || self.page_height == 0 {
            return Err(DataError::ZeroPage {
                doc_id: self.doc_id.clone(),
            });
        }
        for w in &mut self.words {
            w.bbox = normalize_box(&w.px_box, self.page_width, self.page_height);
        }
        Ok(())
    }

    /// Map from word id to position in `words`.
    pub fn id_index(&self) -> Vec<usize> {
        let mut idx = vec![usize::MAX; self.words.len()];
        for (pos, w) in self.words.iter().enumerate() {
            if w.id < idx.len() {
                idx[w.id] = pos;
            }
        }
        idx
    }

    pub fn word(&self, id: usize) -> Option<&OcrWord> {
        self.words.iter().find(|w| w.id == id)
    }

    /// Space-joined text of the given word ids, in the order given.
    pub fn join_words(&self, ids: &[usize]) -> Option<String> {
        let index = self.id_index();
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            let pos = *index.get(id)?;
            parts.push(self.words[pos].text.as_str());
        }
        Some(parts.join(" "))
    }

    /// Checks every structural invariant of the type.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.words.len();
        let mut seen = vec![false; n];
        for (pos, w) in self.words.iter().enumerate() {
            if w.text.is_empty() {
                return Err(DataError::ingest(
                    format!("words[{pos}].text"),
                    "empty text",
                ));
            }
            if w.id >= n || seen[w.id] {
                return Err(DataError::ingest(
                    format!("words[{pos}].id"),
                    format!("id {} is duplicated or outside 0..{n}", w.id),
                ));
            }
            seen[w.id] = true;
            w.bbox.validate()?;
        }
        for (k, ann) in self.annotations.iter().enumerate() {
            if ann.value_word_ids.len() != ann.value_texts.len() {
                return Err(DataError::ingest(
                    format!("annotations[{k}]"),
                    "answer ids and texts differ in length",
                ));
            }
            for (a, ids) in ann.value_word_ids.iter().enumerate() {
                if ids.is_empty() {
                    return Err(DataError::ingest(
                        format!("annotations[{k}].answers[{a}]"),
                        "empty answer",
                    ));
                }
                match self.join_words(ids) {
                    None => {
                        return Err(DataError::ingest(
                            format!("annotations[{k}].answers[{a}]"),
                            "dangling reference",
                        ))
                    }
                    Some(text) if text != ann.value_texts[a] => {
                        return Err(DataError::ingest(
                            format!("annotations[{k}].value_texts[{a}]"),
                            "text does not match referenced words",
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}
