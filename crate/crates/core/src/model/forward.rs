use super::{Arch, ModelError, ModelParams};
use crate::data::{BoundingBox, MlmTargets, PackedInput, Segment, TrainingExample, PAGE_UNITS};
use crate::numerics::{sigmoid_scalar, Graph, Var};

fn check_arch(params: &ModelParams, want: Arch) -> Result<(), ModelError> {
    if params.config.arch != want {
        return Err(ModelError::ArchMismatch {
            expected: want,
            found: params.config.arch,
        });
    }
    Ok(())
}

fn coords(b: &BoundingBox) -> Result<[usize; 6], ModelError> {
    if b.x1 > PAGE_UNITS || b.y1 > PAGE_UNITS || b.x0 > b.x1 || b.y0 > b.y1 {
        return Err(ModelError::Coordinate(format!("{:?}", b.as_array())));
    }
    Ok([
        b.x0 as usize,
        b.y0 as usize,
        b.x1 as usize,
        b.y1 as usize,
        b.width() as usize,
        b.height() as usize,
    ])
}

/// Input embeddings: word + six 2-D location lookups (+ segment, + optional
/// reading-order position).
pub fn embed(
    g: &mut Graph<'_>,
    params: &ModelParams,
    packed: &PackedInput,
) -> Result<Var, ModelError> {
    let cfg = &params.config;
    let n = packed.len();
    if n > cfg.max_len {
        return Err(ModelError::Config(format!(
            "{n} positions exceed max_len {}",
            cfg.max_len
        )));
    }
    let mut ids = Vec::with_capacity(n);
    for &t in &packed.token_ids {
        if t as usize >= cfg.vocab_size {
            return Err(ModelError::Token(t));
        }
        ids.push(t as usize);
    }
    let mut loc_ids: [Vec<usize>; 6] = Default::default();
    for b in &packed.boxes {
        for (k, c) in coords(b)?.into_iter().enumerate() {
            loc_ids[k].push(c);
        }
    }

    let mut h = g.gather(params.ids.word, &ids)?;
    for (table, rows) in params.ids.loc.iter().zip(&loc_ids) {
        let e = g.gather(*table, rows)?;
        h = g.add(h, e)?;
    }
    if let Some(seg) = params.ids.segment {
        let rows: Vec<usize> = packed
            .segments
            .iter()
            .map(|s| usize::from(*s != Segment::Query))
            .collect();
        let e = g.gather(seg, &rows)?;
        h = g.add(h, e)?;
    }
    if let Some(pos) = params.ids.pos1d {
        let rows: Vec<usize> = (0..n).collect();
        let e = g.gather(pos, &rows)?;
        h = g.add(h, e)?;
    }
    Ok(h)
}

/// Multi-head scaled dot-product self-attention of one layer. Returns the
/// output projection and each head's attention weights.
pub fn self_attention(
    g: &mut Graph<'_>,
    params: &ModelParams,
    layer: usize,
    x: Var,
    keep: &[bool],
) -> Result<(Var, Vec<Var>), ModelError> {
    let ids = &params.ids.layers[layer];
    let dh = params.config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let proj = |g: &mut Graph<'_>, w, b| -> Result<Var, ModelError> {
        let wv = g.param(w);
        let bv = g.param(b);
        let y = g.matmul(x, wv)?;
        Ok(g.add_row(y, bv)?)
    };
    let q = proj(g, ids.wq, ids.bq)?;
    let k = proj(g, ids.wk, ids.bk)?;
    let v = proj(g, ids.wv, ids.bv)?;

    let mut heads = Vec::with_capacity(params.config.heads);
    let mut weights = Vec::with_capacity(params.config.heads);
    for h in 0..params.config.heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores, Some(keep))?;
        weights.push(attn);
        heads.push(g.matmul(attn, vh)?);
    }
    let cat = g.concat_cols(&heads)?;
    let wo = g.param(ids.wo);
    let bo = g.param(ids.bo);
    let out = g.matmul(cat, wo)?;
    Ok((g.add_row(out, bo)?, weights))
}

/// Embedding layer norm followed by `L` post-norm transformer blocks.
/// Positions with `keep[j] == false` are invisible as attention keys.
pub fn encode(
    g: &mut Graph<'_>,
    params: &ModelParams,
    h0: Var,
    keep: &[bool],
) -> Result<Var, ModelError> {
    let eps = params.config.ln_eps;
    let gain = g.param(params.ids.emb_ln_gain);
    let bias = g.param(params.ids.emb_ln_bias);
    let mut x = g.layer_norm(h0, gain, bias, eps)?;
    for (l, ids) in params.ids.layers.iter().enumerate() {
        let (attn, _) = self_attention(g, params, l, x, keep)?;
        let res = g.add(x, attn)?;
        let (g1, b1) = (g.param(ids.ln1_gain), g.param(ids.ln1_bias));
        x = g.layer_norm(res, g1, b1, eps)?;

        let w1 = g.param(ids.w1);
        let b1 = g.param(ids.b1);
        let w2 = g.param(ids.w2);
        let b2 = g.param(ids.b2);
        let hid = g.matmul(x, w1)?;
        let hid = g.add_row(hid, b1)?;
        let hid = g.gelu(hid);
        let ff = g.matmul(hid, w2)?;
        let ff = g.add_row(ff, b2)?;
        let res = g.add(x, ff)?;
        let (g2, b2) = (g.param(ids.ln2_gain), g.param(ids.ln2_bias));
        x = g.layer_norm(res, g2, b2, eps)?;
    }
    Ok(x)
}

fn keep_mask(packed: &PackedInput) -> Vec<bool> {
    packed.segments.iter().map(|s| *s != Segment::Pad).collect()
}

/// Mean of the first `m` rows.
pub fn pool_query(g: &mut Graph<'_>, h: Var, m: usize) -> Result<Var, ModelError> {
    if m == 0 {
        return Err(ModelError::EmptyQuery);
    }
    let rows: Vec<usize> = (0..m).collect();
    let q = g.select_rows(h, &rows)?;
    Ok(g.mean_rows(q)?)
}

/// Pairing logits `FC(ĥ_j) · Φ` for the given word rows, as an `N×1` column.
pub fn pair_logits(
    g: &mut Graph<'_>,
    params: &ModelParams,
    words: Var,
    phi: Var,
) -> Result<Var, ModelError> {
    let w = g.param(params.ids.head_w);
    let b = g.param(params.ids.head_b);
    let proj = g.matmul(words, w)?;
    let proj = g.add_row(proj, b)?;
    Ok(g.matmul_bt(proj, phi)?)
}

/// Pairing logits for every OCR token of `packed`, dispatching on the arch.
pub fn forward_logits(
    g: &mut Graph<'_>,
    params: &ModelParams,
    packed: &PackedInput,
) -> Result<Var, ModelError> {
    match params.config.arch {
        Arch::Joint => joint_logits(g, params, packed),
        Arch::Baseline => baseline_logits(g, params, packed),
    }
}

/// Query and OCR tokens encoded together; Φ pooled from the query rows.
pub fn joint_logits(
    g: &mut Graph<'_>,
    params: &ModelParams,
    packed: &PackedInput,
) -> Result<Var, ModelError> {
    check_arch(params, Arch::Joint)?;
    if packed.query_len == 0 {
        return Err(ModelError::EmptyQuery);
    }
    let h0 = embed(g, params, packed)?;
    let h = encode(g, params, h0, &keep_mask(packed))?;
    let phi = pool_query(g, h, packed.query_len)?;
    let rows: Vec<usize> = packed.ocr_range().collect();
    let words = g.select_rows(h, &rows)?;
    pair_logits(g, params, words, phi)
}

/// Shallow-interaction variant: the encoder sees the OCR tokens only and Φ
/// is the mean of static query-token embeddings.
pub fn baseline_logits(
    g: &mut Graph<'_>,
    params: &ModelParams,
    packed: &PackedInput,
) -> Result<Var, ModelError> {
    check_arch(params, Arch::Baseline)?;
    if packed.query_len == 0 {
        return Err(ModelError::EmptyQuery);
    }
    let table = params
        .ids
        .baseline_query
        .expect("baseline arch has a query table");
    let q_ids: Vec<usize> = packed.token_ids[..packed.query_len]
        .iter()
        .map(|&t| t as usize)
        .collect();
    let q = g.gather(table, &q_ids)?;
    let phi = g.mean_rows(q)?;

    let doc_only = ocr_only(packed);
    let h0 = embed(g, params, &doc_only)?;
    let h = encode(g, params, h0, &keep_mask(&doc_only))?;
    let rows: Vec<usize> = (0..packed.ocr_len).collect();
    let words = g.select_rows(h, &rows)?;
    pair_logits(g, params, words, phi)
}

fn ocr_only(packed: &PackedInput) -> PackedInput {
    let m = packed.query_len;
    PackedInput {
        token_ids: packed.token_ids[m..].to_vec(),
        boxes: packed.boxes[m..].to_vec(),
        segments: packed.segments[m..].to_vec(),
        word_pos: packed.word_pos[m..].to_vec(),
        query_len: 0,
        ocr_len: packed.ocr_len,
    }
}

/// Sigmoid pairing score of every OCR token, in (0, 1).
pub fn score_tokens(params: &ModelParams, packed: &PackedInput) -> Result<Vec<f64>, ModelError> {
    let mut g = Graph::new(&params.store);
    let z = forward_logits(&mut g, params, packed)?;
    Ok(g.value(z)
        .data()
        .iter()
        .map(|&v| sigmoid_scalar(v))
        .collect())
}

/// Shallow-interaction scores; errors unless the model is a baseline.
pub fn baseline_score(params: &ModelParams, packed: &PackedInput) -> Result<Vec<f64>, ModelError> {
    check_arch(params, Arch::Baseline)?;
    score_tokens(params, packed)
}

/// Mean BCE of the pairing scores over the OCR tokens of one example.
pub fn retrieval_loss(
    g: &mut Graph<'_>,
    params: &ModelParams,
    example: &TrainingExample,
) -> Result<Var, ModelError> {
    let z = forward_logits(g, params, &example.packed)?;
    Ok(g.bce_with_logits(z, &example.labels)?)
}

/// Vocabulary logits for the masked positions, in target order.
pub fn mlm_logits(
    g: &mut Graph<'_>,
    params: &ModelParams,
    masked: &PackedInput,
    targets: &MlmTargets,
) -> Result<Var, ModelError> {
    if targets.is_empty() {
        return Err(ModelError::NoMaskedPositions);
    }
    let h0 = embed(g, params, masked)?;
    let h = encode(g, params, h0, &keep_mask(masked))?;
    let rows: Vec<usize> = targets.iter().map(|(p, _)| *p).collect();
    let sel = g.select_rows(h, &rows)?;
    let w = g.param(params.ids.mlm_w);
    let b = g.param(params.ids.mlm_b);
    let logits = g.matmul(sel, w)?;
    Ok(g.add_row(logits, b)?)
}

/// Mean cross-entropy over the masked positions only.
pub fn mlm_loss(
    g: &mut Graph<'_>,
    params: &ModelParams,
    masked: &PackedInput,
    targets: &MlmTargets,
) -> Result<Var, ModelError> {
    let logits = mlm_logits(g, params, masked, targets)?;
    let tgt: Vec<usize> = targets.iter().map(|(_, t)| *t as usize).collect();
    Ok(g.cross_entropy(logits, &tgt)?)
}

/// `(1/N) Σ −[y log s + (1−y) log(1−s)]` on probabilities.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> Result<f64, ModelError> {
    if scores.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if scores.len() != labels.len() {
        return Err(ModelError::Config(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| -(y * s.ln() + (1.0 - y) * (1.0 - s).ln()))
        .sum();
    Ok(total / scores.len() as f64)
}
