use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, ParamId, ParamStore, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinate with the largest error: (parameter name, flat index).
    pub worst: Option<(String, usize)>,
}

/// Compares the tape's gradients against central differences.
///
/// Half of the `samples` coordinates are drawn from entries with a nonzero
/// analytic gradient (embedding tables are mostly untouched rows), the rest
/// uniformly from all coordinates. The error per coordinate is
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F, E>(
    params: &ParamStore,
    loss_fn: F,
    h: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, E>,
    E: From<NumericsError>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };

    let mut all = Vec::new();
    let mut nonzero = Vec::new();
    for (id, _, t) in params.iter() {
        let grad = analytic.dense(id, params);
        for j in 0..t.len() {
            all.push((id, j));
            if grad.data()[j] != 0.0 {
                nonzero.push((id, j));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    let half = samples / 2;
    let take = half.min(nonzero.len());
    coords.extend(
        sample(&mut rng, nonzero.len(), take)
            .iter()
            .map(|i| nonzero[i]),
    );
    let rest = (samples - take).min(all.len());
    coords.extend(sample(&mut rng, all.len(), rest).iter().map(|i| all[i]));
    coords.sort_unstable();
    coords.dedup();

    let eval = |p: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new(p);
        let l = loss_fn(&mut g)?;
        Ok(g.value(l).item())
    };

    let mut perturbed = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (id, j) in coords {
        let orig = params.get(id).data()[j];
        perturbed.get_mut(id).data_mut()[j] = orig + h;
        let up = eval(&perturbed)?;
        perturbed.get_mut(id).data_mut()[j] = orig - h;
        let down = eval(&perturbed)?;
        perturbed.get_mut(id).data_mut()[j] = orig;

        let numeric = (up - down) / (2.0 * h);
        let a = analytic.get(id).map_or(0.0, |g| g.data()[j]);
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst = Some((params.name(id).to_string(), j));
            }
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_form_is_exact() {
        let mut s = ParamStore::new();
        let x = s.insert("x", Tensor::from_rows(&[vec![0.3, -1.2, 2.0]]));
        let a = Tensor::from_rows(&[
            vec![2.0, 0.5, 0.0],
            vec![0.5, 1.0, -0.3],
            vec![0.0, -0.3, 3.0],
        ]);
        let report = grad_check::<_, NumericsError>(
            &s,
            |g| {
                let xv = g.param(x);
                let av = g.input(a.clone());
                let ax = g.matmul_bt(xv, av)?;
                let q = g.mul(ax, xv)?;
                Ok(g.sum(q))
            },
            1e-5,
            10,
            0,
        )
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn sigmoid_dot_product_head() {
        let mut s = ParamStore::new();
        let w = s.insert(
            "w",
            Tensor::from_rows(&[
                vec![0.2, -0.4, 0.1],
                vec![0.7, 0.05, -0.3],
                vec![-0.1, 0.3, 0.25],
            ]),
        );
        let b = s.insert("b", Tensor::from_rows(&[vec![0.01, -0.02, 0.03]]));
        let h = Tensor::from_rows(&[
            vec![0.5, -0.2, 0.9],
            vec![-1.0, 0.4, 0.3],
            vec![0.2, 0.2, -0.6],
            vec![1.3, -0.7, 0.1],
        ]);
        let report = grad_check::<_, NumericsError>(
            &s,
            |g| {
                let hv = g.input(h.clone());
                let q = g.select_rows(hv, &[0])?;
                let phi_q = g.mean_rows(q)?;
                let words = g.select_rows(hv, &[1, 2, 3])?;
                let wv = g.param(w);
                let bv = g.param(b);
                let proj = g.matmul(words, wv)?;
                let proj = g.add_row(proj, bv)?;
                let z = g.matmul_bt(proj, phi_q)?;
                g.bce_with_logits(z, &[1.0, 0.0, 0.0])
            },
            1e-5,
            100,
            1,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
