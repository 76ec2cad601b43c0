use formquery_core::data::{build_vocab, gen_corpus, Document, SynthSpec, Vocab};
use formquery_core::model::{ModelConfig, ModelParams};
use formquery_core::retrieve::{retrieve_value, word_scores, RetrieveOptions};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(vocab: &Vocab, use_1d: bool) -> ModelParams {
    let cfg = ModelConfig {
        d: 16,
        layers: 2,
        heads: 2,
        use_1d_positions: use_1d,
        ..ModelConfig::new(vocab.len())
    };
    ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(21)).unwrap()
}

fn shuffled(doc: &Document, seed: u64) -> Document {
    let mut d = doc.clone();
    d.words.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    d
}

/// Scores keyed by word id.
fn by_id(doc: &Document, scores: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; doc.words.len()];
    for (w, s) in doc.words.iter().zip(scores) {
        out[w.id] = *s;
    }
    out
}

fn max_change(params: &ModelParams, vocab: &Vocab, doc: &Document, seed: u64) -> f64 {
    let q = &doc.annotations[0].key_text;
    let perm = shuffled(doc, seed);
    let a = by_id(doc, &word_scores(doc, q, params, vocab, 512).unwrap());
    let b = by_id(&perm, &word_scores(&perm, q, params, vocab, 512).unwrap());
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn word_order_does_not_matter() {
    let docs = gen_corpus(&SynthSpec::default(), 8, 77).unwrap();
    let vocab = build_vocab(&docs, 500);
    let params = model(&vocab, false);
    let opts = RetrieveOptions::default();
    for (i, doc) in docs.iter().enumerate() {
        assert!(max_change(&params, &vocab, doc, i as u64) < 1e-9);
        let q = &doc.annotations[1].key_text;
        let a = retrieve_value(doc, q, &params, &vocab, &opts).unwrap();
        let b = retrieve_value(&shuffled(doc, i as u64), q, &params, &vocab, &opts).unwrap();
        assert_eq!(a.candidate.word_ids, b.candidate.word_ids);
        assert_eq!(a.candidate.text, b.candidate.text);
    }
}

#[test]
fn reading_order_embedding_breaks_invariance() {
    let docs = gen_corpus(&SynthSpec::default(), 4, 78).unwrap();
    let vocab = build_vocab(&docs, 500);
    let params = model(&vocab, true);
    let worst = docs
        .iter()
        .enumerate()
        .map(|(i, d)| max_change(&params, &vocab, d, i as u64))
        .fold(0.0, f64::max);
    assert!(worst > 1e-3, "{worst}");
}

#[test]
fn retrieval_is_repeatable() {
    let docs = gen_corpus(&SynthSpec::default(), 2, 79).unwrap();
    let vocab = build_vocab(&docs, 500);
    let params = model(&vocab, false);
    let opts = RetrieveOptions::default();
    let q = &docs[0].annotations[0].key_text;
    let a = retrieve_value(&docs[0], q, &params, &vocab, &opts).unwrap();
    let b = retrieve_value(&docs[0], q, &params, &vocab, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_document_has_no_candidates() {
    let mut doc = gen_corpus(&SynthSpec::default(), 1, 80).unwrap().remove(0);
    let vocab = build_vocab([&doc], 500);
    let params = model(&vocab, false);
    doc.words.clear();
    assert!(matches!(
        retrieve_value(&doc, "date", &params, &vocab, &RetrieveOptions::default()),
        Err(formquery_core::retrieve::RetrieveError::NoCandidates(_))
    ));
}
