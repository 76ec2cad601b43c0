use formquery_core::numerics::{
    adam_step, grad_check, matmul, sigmoid_scalar, softmax_rows, AdamState, Graph, NumericsError,
    ParamStore, Tensor,
};
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(t in tensor(4, 7)) {
        let s = softmax_rows(&t);
        for i in 0..4 {
            let row = s.row(i);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p <= 1.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(t in tensor(2, 5), c in -100.0f64..100.0) {
        let shifted = Tensor::new(vec![2, 5], t.data().iter().map(|v| v + c).collect()).unwrap();
        let (a, b) = (softmax_rows(&t), softmax_rows(&shifted));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_naive_sum(a in tensor(3, 4), b in tensor(4, 2)) {
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let want: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
                prop_assert!((c.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_is_symmetric(x in -800.0f64..800.0) {
        let s = sigmoid_scalar(x);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s + sigmoid_scalar(-x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn composite_graph_gradients(a in tensor(3, 4), w in tensor(4, 4), seed in 0u64..1000) {
        let mut store = ParamStore::new();
        let ia = store.insert("a", a);
        let iw = store.insert("w", w.clone());
        let ig = store.insert("g", Tensor::full(&[1, 4], 1.0));
        let ib = store.insert("b", Tensor::zeros(&[1, 4]));
        let report = grad_check(&store, |g: &mut Graph<'_>| -> Result<_, NumericsError> {
            let (a, w, gain, bias) = (g.param(ia), g.param(iw), g.param(ig), g.param(ib));
            let h = g.matmul(a, w)?;
            let h = g.layer_norm(h, gain, bias, 1e-12)?;
            let h = g.gelu(h);
            let s = g.matmul_bt(h, h)?;
            let s = g.scale(s, 0.5);
            let p = g.softmax_rows(s, None)?;
            let m = g.mean_rows(p)?;
            let sq = g.mul(m, m)?;
            Ok(g.sum(sq))
        }, 1e-5, 40, seed).unwrap();
        prop_assert!(report.checked > 0);
        prop_assert!(report.max_rel_error < 1e-5, "{:?}", report);
    }
}

#[test]
fn adam_descends_a_bowl() {
    let mut store = ParamStore::new();
    let id = store.insert("x", Tensor::new(vec![1, 3], vec![3.0, -2.0, 1.0]).unwrap());
    let mut state = AdamState::new(&store, 0.1, 0.0);
    for _ in 0..300 {
        let mut g = Graph::new(&store);
        let x = g.param(id);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        adam_step(&mut store, &grads, &mut state);
    }
    assert!(store.get(id).data().iter().all(|v| v.abs() < 0.05));
}
