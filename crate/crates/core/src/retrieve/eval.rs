use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RetrieveError;

/// Identifies one query: an annotation of a document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryKey {
    pub doc_id: String,
    pub annotation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldQuery {
    pub key: QueryKey,
    pub query: String,
    /// Acceptable answers; matching any one is correct.
    pub answers: Vec<String>,
}

/// What the system returned for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicted {
    /// `None` when the system abstained or had nothing to offer.
    pub text: Option<String>,
    /// Number of value candidates considered.
    pub candidates: usize,
}

/// String comparison rule. The default is exact and case-sensitive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub case_fold: bool,
    pub collapse_whitespace: bool,
}

impl MatchOptions {
    fn normalize(&self, s: &str) -> String {
        let s = if self.collapse_whitespace {
            s.split_whitespace().collect::<Vec<_>>().join(" ")
        } else {
            s.to_string()
        };
        if self.case_fold {
            s.to_lowercase()
        } else {
            s
        }
    }

    pub fn matches(&self, predicted: &str, gold: &str) -> bool {
        self.normalize(predicted) == self.normalize(gold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub doc_id: String,
    pub annotation: usize,
    pub query: String,
    pub predicted: Option<String>,
    pub gold: Vec<String>,
    pub correct: bool,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    /// Builds the ratios from counts. Empty denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, records: Vec<EvalRecord>) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            records,
        }
    }
}

/// Exact-match scoring.
///
/// A correct answer is a true positive. A wrong answer is both a false
/// positive and a false negative. A gold query with no answer is a false
/// negative.
pub fn evaluate(
    predictions: &BTreeMap<QueryKey, Predicted>,
    gold: &[GoldQuery],
    opts: MatchOptions,
) -> Result<EvalReport, RetrieveError> {
    let known: BTreeMap<&QueryKey, &GoldQuery> = gold.iter().map(|g| (&g.key, g)).collect();
    if let Some(k) = predictions.keys().find(|k| !known.contains_key(k)) {
        return Err(RetrieveError::UnknownQuery(format!(
            "{}#{}",
            k.doc_id, k.annotation
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut records = Vec::with_capacity(gold.len());
    for g in gold {
        let pred = predictions.get(&g.key);
        let text = pred.and_then(|p| p.text.clone());
        let correct = match &text {
            Some(t) => g.answers.iter().any(|a| opts.matches(t, a)),
            None => false,
        };
        match (&text, correct) {
            (Some(_), true) => tp += 1,
            (Some(_), false) => {
                fp += 1;
                fn_ += 1;
            }
            (None, _) => fn_ += 1,
        }
        records.push(EvalRecord {
            doc_id: g.key.doc_id.clone(),
            annotation: g.key.annotation,
            query: g.query.clone(),
            predicted: text,
            gold: g.answers.clone(),
            correct,
            candidates: pred.map_or(0, |p| p.candidates),
        });
    }
    Ok(EvalReport::from_counts(tp, fp, fn_, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(doc: &str, ann: usize, answers: &[&str]) -> GoldQuery {
        GoldQuery {
            key: QueryKey {
                doc_id: doc.into(),
                annotation: ann,
            },
            query: "q".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn pred(text: &str) -> Predicted {
        Predicted {
            text: Some(text.into()),
            candidates: 3,
        }
    }

    #[test]
    fn all_correct() {
        let g = vec![gold("d", 0, &["a"]), gold("d", 1, &["b"])];
        let p = BTreeMap::from([(g[0].key.clone(), pred("a")), (g[1].key.clone(), pred("b"))]);
        let r = evaluate(&p, &g, MatchOptions::default()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_wrong() {
        let g = vec![gold("d", 0, &["a"]), gold("d", 1, &["b"])];
        let p = BTreeMap::from([(g[0].key.clone(), pred("a")), (g[1].key.clone(), pred("x"))]);
        let r = evaluate(&p, &g, MatchOptions::default()).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 1));
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn second_answer_counts() {
        let g = vec![gold("d", 0, &["Jan 5", "01/05"])];
        let p = BTreeMap::from([(g[0].key.clone(), pred("01/05"))]);
        assert_eq!(evaluate(&p, &g, MatchOptions::default()).unwrap().tp, 1);
    }

    #[test]
    fn abstention_is_a_miss_only() {
        let g = vec![gold("d", 0, &["a"]), gold("d", 1, &["b"])];
        let p = BTreeMap::from([
            (g[0].key.clone(), pred("a")),
            (
                g[1].key.clone(),
                Predicted {
                    text: None,
                    candidates: 0,
                },
            ),
        ]);
        let r = evaluate(&p, &g, MatchOptions::default()).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 1));
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
    }

    #[test]
    fn case_and_space_rules() {
        let strict = MatchOptions::default();
        assert!(!strict.matches("TOTAL", "total"));
        assert!(!strict.matches("a  b", "a b"));
        let loose = MatchOptions {
            case_fold: true,
            collapse_whitespace: true,
        };
        assert!(loose.matches(" A  b", "a B"));
    }

    #[test]
    fn unknown_prediction_rejected() {
        let g = vec![gold("d", 0, &["a"])];
        let p = BTreeMap::from([(
            QueryKey {
                doc_id: "other".into(),
                annotation: 0,
            },
            pred("a"),
        )]);
        assert!(matches!(
            evaluate(&p, &g, MatchOptions::default()),
            Err(RetrieveError::UnknownQuery(_))
        ));
    }

    #[test]
    fn report_json_shape() {
        let r = EvalReport::from_counts(1, 0, 0, vec![]);
        let v = serde_json::to_value(&r).unwrap();
        for k in ["precision", "recall", "f1", "tp", "fp", "fn", "records"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
}
