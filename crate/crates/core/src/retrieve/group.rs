use serde::{Deserialize, Serialize};

use crate::data::{BoundingBox, OcrWord, PixelBox};

/// Horizontal gap and vertical-overlap thresholds for value grouping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    /// Largest horizontal gap between neighbours, in page units.
    pub eps: f64,
    /// Required vertical overlap as a fraction of the shorter box.
    pub min_vert_overlap: f64,
}

impl Default for GroupParams {
    fn default() -> Self {
        Self {
            eps: 15.0,
            min_vert_overlap: 0.5,
        }
    }
}

/// A run of horizontally adjacent words that may form one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCandidate {
    /// Member ids ordered by `x0`, then id.
    pub word_ids: Vec<usize>,
    pub text: String,
    #[serde(rename = "box_norm")]
    pub bbox: BoundingBox,
    #[serde(rename = "box_px")]
    pub px_box: PixelBox,
    /// Max of member word scores; 0 until scored.
    pub score: f64,
}

/// Neighbour relation of the grouping: enough vertical overlap and a small
/// enough horizontal gap.
pub fn are_neighbors(a: &BoundingBox, b: &BoundingBox, p: GroupParams) -> bool {
    let overlap = a.y1.min(b.y1) as f64 - a.y0.max(b.y0) as f64;
    let min_h = a.height().min(b.height()) as f64;
    if overlap < p.min_vert_overlap * min_h {
        return false;
    }
    let gap = (a.x0.max(b.x0) as f64 - a.x1.min(b.x1) as f64).max(0.0);
    gap <= p.eps
}

/// Density-based clustering of word boxes with `minPts = 1`, so every word
/// is a core point and each cluster is a connected component of the
/// neighbour graph. Candidates come out ordered by their smallest word id.
pub fn group_candidates(words: &[OcrWord], p: GroupParams) -> Vec<ValueCandidate> {
    const UNSEEN: usize = usize::MAX;
    let n = words.len();
    let mut label = vec![UNSEEN; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if label[start] != UNSEEN {
            continue;
        }
        let c = clusters.len();
        label[start] = c;
        let mut members = vec![start];
        let mut frontier = vec![start];
        while let Some(i) = frontier.pop() {
            for j in 0..n {
                if label[j] == UNSEEN && are_neighbors(&words[i].bbox, &words[j].bbox, p) {
                    label[j] = c;
                    members.push(j);
                    frontier.push(j);
                }
            }
        }
        clusters.push(members);
    }

    let mut out: Vec<ValueCandidate> = clusters
        .into_iter()
        .map(|mut members| {
            members.sort_by_key(|&i| (words[i].bbox.x0, words[i].id));
            let first = &words[members[0]];
            let (mut bbox, mut px_box) = (first.bbox, first.px_box);
            for &i in &members[1..] {
                bbox = bbox.union(&words[i].bbox);
                px_box = px_box.union(&words[i].px_box);
            }
            ValueCandidate {
                word_ids: members.iter().map(|&i| words[i].id).collect(),
                text: members
                    .iter()
                    .map(|&i| words[i].text.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                bbox,
                px_box,
                score: 0.0,
            }
        })
        .collect();
    out.sort_by_key(|c| c.word_ids.iter().copied().min());
    out
}
