use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Tensor};

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// True if the moment buffers line up with `params`.
    pub fn matches(&self, params: &ParamStore) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, _, p), (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }
}

/// Applies one update. Parameters with no recorded gradient are treated as
/// having a zero gradient, so their moments still decay.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) {
    assert!(
        state.matches(params),
        "optimizer state does not match parameters"
    );
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps, wd) = (
        state.beta1,
        state.beta2,
        state.lr,
        state.eps,
        state.weight_decay,
    );

    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads.get(super::ParamId(i));
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(0.0, |g| g.data()[j]);
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            if wd != 0.0 {
                *w -= lr * wd * *w;
            }
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;

    fn store_with(values: Vec<f64>) -> (ParamStore, super::super::ParamId) {
        let mut s = ParamStore::new();
        let n = values.len();
        let id = s.insert("w", Tensor::new(vec![1, n], values).unwrap());
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, _) = store_with(vec![0.5, -1.5]);
        let before = s.clone();
        let mut st = AdamState::new(&s, 1e-3, 0.0);
        adam_step(&mut s, &Gradients::empty(&before), &mut st);
        assert_eq!(s, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+eps).
        let (mut s, id) = store_with(vec![1.0, 1.0, 1.0]);
        let lr = 1e-2;
        let mut st = AdamState::new(&s, lr, 0.0);
        let grads = {
            let mut g = Graph::new(&s);
            let w = g.param(id);
            let k = g.input(Tensor::new(vec![1, 3], vec![3.0, -0.25, 40.0]).unwrap());
            let p = g.mul(w, k).unwrap();
            let l = g.sum(p);
            g.backward(l).unwrap()
        };
        adam_step(&mut s, &grads, &mut st);
        let expected = [1.0 - lr, 1.0 + lr, 1.0 - lr];
        for (a, b) in s.get(id).data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn quadratic_loss_decreases() {
        let (mut s, id) = store_with(vec![2.0, -3.0, 0.7, 1.2]);
        let mut st = AdamState::new(&s, 0.05, 0.0);
        let loss_of = |s: &ParamStore| -> (f64, Gradients) {
            let mut g = Graph::new(s);
            let w = g.param(id);
            let sq = g.mul(w, w).unwrap();
            let l = g.sum(sq);
            let v = g.value(l).item();
            (v, g.backward(l).unwrap())
        };
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let (l, grads) = loss_of(&s);
            assert!(l < prev, "loss went from {prev} to {l}");
            prev = l;
            adam_step(&mut s, &grads, &mut st);
        }
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let (mut s, id) = store_with(vec![1.0]);
        let mut st = AdamState::new(&s, 0.1, 0.5);
        let empty = Gradients::empty(&s);
        adam_step(&mut s, &empty, &mut st);
        assert!((s.get(id).item() - 0.95).abs() < 1e-15);
    }
}
