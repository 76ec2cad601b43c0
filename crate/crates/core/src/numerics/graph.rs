//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Nodes
//! are appended in evaluation order, so the tape is already topologically
//! sorted and [`Graph::backward`] is a single reverse sweep.

use std::borrow::Cow;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tensor::{
    matmul_at_into, matmul_bt_into, matmul_into, sigmoid_scalar, softmax_in_place, softplus,
};
use super::{NumericsError, Tensor};

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(params: &ParamStore) -> Self {
        Self {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, materialising zeros for untouched parameters.
    pub fn dense(&self, id: ParamId, params: &ParamStore) -> Tensor {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(params.get(id).shape()))
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.grads.iter_mut().flatten() {
            t.scale_assign(k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }

    fn add_into(&mut self, id: ParamId, shape: &[usize], f: impl FnOnce(&mut Tensor)) {
        let slot = &mut self.grads[id.0];
        let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
        f(t);
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Gather {
        table: ParamId,
        ids: Vec<usize>,
    },
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    Gelu(Var),
    Sigmoid(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    MeanRows(Var),
    Sum(Var),
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
pub struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    grad: Option<Tensor>,
}

/// Operation tape bound to a parameter store for the duration of one pass.
#[derive(Debug)]
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn shape_err(msg: String) -> NumericsError {
    NumericsError::Shape(msg)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(self.params.get(id)),
            op: Op::Param(id),
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Rows of a parameter table, one per id (embedding lookup).
    pub fn gather(&mut self, table: ParamId, ids: &[usize]) -> Result<Var, NumericsError> {
        let t = self.params.get(table);
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= r {
                return Err(shape_err(format!(
                    "gather index {i} out of range for table {} with {r} rows",
                    self.params.name(table)
                )));
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![ids.len(), c], data)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err(format!("matmul {m}x{k} × {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// `a × bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err(format!("matmul_bt {m}x{k} × ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err(format!(
                "add {:?} + {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (_, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(shape_err(format!(
                "add_row: row has {} entries, matrix has {n} columns",
                self.value(row).len()
            )));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data();
        if n > 0 {
            for chunk in out.data_mut().chunks_mut(n) {
                for (o, b) in chunk.iter_mut().zip(r) {
                    *o += b;
                }
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err("mul shapes differ".into()));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(k);
        self.push(out, Op::Scale(a, k))
    }

    /// Row softmax. Columns with `keep[j] == false` receive zero probability,
    /// which is the additive −∞ mask expressed without storing infinities.
    pub fn softmax_rows(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var, NumericsError> {
        let (_, c) = self.dims(x);
        if let Some(k) = keep {
            if k.len() != c {
                return Err(shape_err(format!(
                    "softmax mask {} vs {c} columns",
                    k.len()
                )));
            }
        }
        let mut out = self.value(x).clone();
        if c > 0 {
            for row in out.data_mut().chunks_mut(c) {
                softmax_in_place(row, keep);
            }
        }
        // Masked entries are exactly zero, so the backward rule needs no mask.
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let (_, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(shape_err("layer_norm parameter width".into()));
        }
        let mut out = self.value(x).clone();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        if c > 0 {
            for row in out.data_mut().chunks_mut(c) {
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - mean) * rstd * g[j] + b[j];
                }
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            let u = GELU_C * (*v + 0.044715 * *v * *v * *v);
            *v = 0.5 * *v * (1.0 + u.tanh());
        }
        self.push(out, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = sigmoid_scalar(*v);
        }
        self.push(out, Op::Sigmoid(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(shape_err(format!("slice_cols {start}+{len} > {c}")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        Ok(self.push(Tensor::new(vec![r, len], data)?, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let r = parts.first().map_or(0, |&p| self.dims(p).0);
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return Err(shape_err("concat_cols row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(
            Tensor::new(vec![r, total], data)?,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(shape_err(format!("select_rows index {i} >= {r}")));
            }
            data.extend_from_slice(self.value(x).row(i));
        }
        Ok(self.push(
            Tensor::new(vec![rows.len(), c], data)?,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Column means, as a `1×c` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x);
        if r == 0 {
            return Err(shape_err("mean over zero rows".into()));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(self.value(x).row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        Ok(self.push(Tensor::new(vec![1, c], out)?, Op::MeanRows(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`,
    /// evaluated in the log-domain: `mean(softplus(z) − y·z)`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var, NumericsError> {
        let z = self.value(logits);
        if z.len() != labels.len() {
            return Err(shape_err(format!(
                "bce: {} logits vs {} labels",
                z.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(NumericsError::Contract("bce over zero elements".into()));
        }
        let n = labels.len() as f64;
        let total: f64 = z
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum();
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Mean softmax cross-entropy; row `i` of `logits` is scored against `targets[i]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(logits);
        if r != targets.len() {
            return Err(shape_err(format!(
                "cross_entropy: {r} rows vs {} targets",
                targets.len()
            )));
        }
        if r == 0 {
            return Err(NumericsError::Contract(
                "cross_entropy over zero rows".into(),
            ));
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(shape_err(format!("target {t} >= {c} classes")));
            }
            let row = self.value(logits).row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        Ok(self.push(
            Tensor::scalar(total / r as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Populates every node's gradient and
    /// returns the accumulated gradients of the parameters that were touched.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut param_grads = Gradients::empty(self.params);
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads, &mut param_grads);
            self.nodes[idx].grad = Some(g);
        }
        Ok(param_grads)
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        param_grads: &mut Gradients,
    ) {
        let value = &self.nodes[idx].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let shape = self.nodes[v.0].value.shape();
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
            f(slot.data_mut());
        };
        match &self.nodes[idx].op {
            Op::Input => {}
            Op::Param(id) => {
                param_grads.add_into(*id, value.shape(), |t| t.add_assign(g));
            }
            Op::Gather { table, ids } => {
                let shape = self.params.get(*table).shape().to_vec();
                let c = g.cols();
                param_grads.add_into(*table, &shape, |t| {
                    for (i, &row) in ids.iter().enumerate() {
                        for (d, s) in t.row_mut(row).iter_mut().zip(&g.data()[i * c..(i + 1) * c]) {
                            *d += s;
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // dA = G·Bᵀ, dB = Aᵀ·G
                acc(*a, &mut |da| matmul_bt_into(g.data(), bv, da, m, n, k));
                acc(*b, &mut |db| matmul_at_into(av, g.data(), db, m, k, n));
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                acc(*a, &mut |da| matmul_into(g.data(), bv, da, m, n, k));
                acc(*b, &mut |db| matmul_at_into(g.data(), av, db, m, n, k));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_slice(da, g.data()));
                acc(*b, &mut |db| add_slice(db, g.data()));
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |da| add_slice(da, g.data()));
                let c = g.cols();
                acc(*row, &mut |dr| {
                    if c > 0 {
                        for chunk in g.data().chunks(c) {
                            add_slice(dr, chunk);
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |da| {
                    for ((d, gi), bi) in da.iter_mut().zip(g.data()).zip(bv) {
                        *d += gi * bi;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, gi), ai) in db.iter_mut().zip(g.data()).zip(av) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Scale(a, k) => {
                acc(*a, &mut |da| {
                    for (d, gi) in da.iter_mut().zip(g.data()) {
                        *d += k * gi;
                    }
                });
            }
            Op::Softmax(x) => {
                let c = g.cols();
                acc(*x, &mut |dx| {
                    if c == 0 {
                        return;
                    }
                    for ((dr, yr), gr) in dx
                        .chunks_mut(c)
                        .zip(value.data().chunks(c))
                        .zip(g.data().chunks(c))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for ((d, y), gi) in dr.iter_mut().zip(yr).zip(gr) {
                            *d += y * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain).data();
                let c = xv.cols();
                let r = xv.rows();
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut dx_all = vec![0.0; r * c];
                for i in 0..r {
                    let row = xv.row(i);
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let rstd = 1.0 / (var + eps).sqrt();
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * rstd;
                        let dxhat = gr[j] * gv[j];
                        dgain[j] += gr[j] * xhat;
                        dbias[j] += gr[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    let dx = &mut dx_all[i * c..(i + 1) * c];
                    for j in 0..c {
                        let xhat = (row[j] - mean) * rstd;
                        let dxhat = gr[j] * gv[j];
                        dx[j] = rstd
                            * (dxhat - sum_dxhat / c as f64 - xhat * sum_dxhat_xhat / c as f64);
                    }
                }
                acc(*x, &mut |d| add_slice(d, &dx_all));
                acc(*gain, &mut |d| add_slice(d, &dgain));
                acc(*bias, &mut |d| add_slice(d, &dbias));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |dx| {
                    for ((d, &v), gi) in dx.iter_mut().zip(xv).zip(g.data()) {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        let deriv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                        *d += gi * deriv;
                    }
                });
            }
            Op::Sigmoid(x) => {
                acc(*x, &mut |dx| {
                    for ((d, s), gi) in dx.iter_mut().zip(value.data()).zip(g.data()) {
                        *d += gi * s * (1.0 - s);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let c_out = g.cols();
                let c_in = self.dims(*x).1;
                acc(*x, &mut |dx| {
                    for i in 0..g.rows() {
                        let dst = &mut dx[i * c_in + start..i * c_in + start + c_out];
                        add_slice(dst, &g.data()[i * c_out..(i + 1) * c_out]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    acc(p, &mut |dp| {
                        for i in 0..g.rows() {
                            let src = &g.data()[i * total + offset..i * total + offset + w];
                            add_slice(&mut dp[i * w..(i + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
            Op::SelectRows { x, rows } => {
                let c = g.cols();
                acc(*x, &mut |dx| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_slice(&mut dx[r * c..(r + 1) * c], &g.data()[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::MeanRows(x) => {
                let (r, c) = self.dims(*x);
                acc(*x, &mut |dx| {
                    for i in 0..r {
                        for (d, gi) in dx[i * c..(i + 1) * c].iter_mut().zip(g.data()) {
                            *d += gi / r as f64;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gi = g.item();
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += gi));
            }
            Op::BceWithLogits { logits, labels } => {
                let zv = self.value(*logits).data();
                let scale = g.item() / labels.len() as f64;
                acc(*logits, &mut |dz| {
                    for ((d, &z), &y) in dz.iter_mut().zip(zv).zip(labels) {
                        *d += scale * (sigmoid_scalar(z) - y);
                    }
                });
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let scale = g.item() / targets.len() as f64;
                acc(*logits, &mut |dl| {
                    for (i, &t) in targets.iter().enumerate() {
                        let mut p = lv.row(i).to_vec();
                        softmax_in_place(&mut p, None);
                        p[t] -= 1.0;
                        for (d, pi) in dl[i * c..(i + 1) * c].iter_mut().zip(&p) {
                            *d += scale * pi;
                        }
                    }
                });
            }
        }
    }
}

fn add_slice(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sum_gives_ones() {
        let mut store = ParamStore::new();
        let w = store.insert(
            "w",
            Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]]),
        );
        let mut g = Graph::new(&store);
        let wv = g.param(w);
        let loss = g.sum(wv);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(w).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::scalar(3.0));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2]]));
        let run = || {
            let mut g = Graph::new(&store);
            let wv = g.param(w);
            let x = g.input(Tensor::from_rows(&[vec![1.0, 2.0]]));
            let y = g.matmul(x, wv).unwrap();
            let s = g.softmax_rows(y, None).unwrap();
            let l = g.cross_entropy(s, &[1]).unwrap();
            g.backward(l).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bce_with_logits_matches_closed_form() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.input(Tensor::scalar(0.0));
        let l = g.bce_with_logits(z, &[1.0]).unwrap();
        assert_abs_diff_eq!(g.value(l).item(), 2f64.ln(), epsilon = 1e-15);
        let l0 = g.bce_with_logits(z, &[0.0]).unwrap();
        assert_abs_diff_eq!(g.value(l0).item(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_log_v() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.input(Tensor::zeros(&[3, 7]));
        let l = g.cross_entropy(z, &[0, 3, 6]).unwrap();
        assert_abs_diff_eq!(g.value(l).item(), 7f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut store = ParamStore::new();
        let t = store.insert("t", Tensor::zeros(&[4, 2]));
        let mut g = Graph::new(&store);
        assert!(g.gather(t, &[4]).is_err());
    }
}
