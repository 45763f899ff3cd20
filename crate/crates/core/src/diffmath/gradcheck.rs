use rand::seq::index;

use super::{ParamStore, Result, Tensor, TensorError};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Options for [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per tensor; `None` checks all of them.
    pub per_tensor: Option<usize>,
    /// Floor of the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            per_tensor: None,
            floor: 1e-6,
            seed: 0,
        }
    }
}

/// Compares `analytic` (one gradient per parameter tensor, in store order)
/// with central differences of `loss`, reporting the largest relative error
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn finite_diff_check(
    params: &mut ParamStore<f64>,
    analytic: &[Tensor<f64>],
    mut loss: impl FnMut(&ParamStore<f64>) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if analytic.len() != params.len() {
        return Err(TensorError::Invalid(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for (t, id) in ids.into_iter().enumerate() {
        let n = params.get(id).len();
        if analytic[t].len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "finite_diff_check",
                left: params.get(id).shape().to_vec(),
                right: analytic[t].shape().to_vec(),
            });
        }
        let coords: Vec<usize> = match opts.per_tensor {
            Some(k) if k < n => {
                let mut rng = seed::rng(opts.seed, seed::stream::GRADCHECK, t as u64);
                let mut c = index::sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + opts.eps;
            let up = loss(params);
            params.get_mut(id).data_mut()[i] = orig - opts.eps;
            let down = loss(params);
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (up? - down?) / (2.0 * opts.eps);
            let a = analytic[t].data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::{nn, Graph};
    use super::*;

    fn loss_and_grads(ps: &ParamStore<f64>, w: &nn::MhaWeights, two: &nn::MhaWeights) -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::new();
        let p = ps.bind(&mut g);
        let q = p[ps.id("q").unwrap().index()];
        let v = p[ps.id("v").unwrap().index()];
        let (o, _) = nn::mha(&mut g, &p, w, q, v).unwrap();
        let (_, s) = nn::mha(&mut g, &p, two, o, v).unwrap();
        let s = g.sigmoid(s).unwrap();
        let loss = g.cross_entropy(s, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let value = g.value(loss).item();
        let grads = g.backward(loss).unwrap();
        (value, p.iter().map(|&v| grads.get(v).unwrap().clone()).collect())
    }

    #[test]
    fn two_layer_mha_gradients_match() {
        for s in 0..10u64 {
            let mut rng = seed::rng(s, seed::stream::GRADCHECK, 100);
            let mut ps = ParamStore::<f64>::new();
            ps.add("q", nn::init_uniform(&mut rng, 2, 8, 1));
            ps.add("v", nn::init_uniform(&mut rng, 3, 8, 1));
            let w = nn::MhaWeights::new(&mut ps, "l1", 8, 4, &mut rng).unwrap();
            let two = nn::MhaWeights::new(&mut ps, "l2", 8, 1, &mut rng).unwrap();
            let (_, analytic) = loss_and_grads(&ps, &w, &two);
            let report = finite_diff_check(
                &mut ps,
                &analytic,
                |ps| Ok(loss_and_grads(ps, &w, &two).0),
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {s}: {report:?}");
        }
    }

    #[test]
    fn elementwise_ops_gradients_match() {
        for s in 0..10u64 {
            let mut rng = seed::rng(s, seed::stream::GRADCHECK, 200);
            let mut ps = ParamStore::<f64>::new();
            ps.add("a", nn::init_uniform(&mut rng, 3, 4, 1));
            ps.add("b", nn::init_uniform(&mut rng, 3, 4, 1));
            ps.add("g", nn::init_uniform(&mut rng, 1, 4, 1));
            ps.add("r", nn::init_uniform(&mut rng, 1, 8, 1));
            let f = |ps: &ParamStore<f64>, want: bool| {
                let mut g = Graph::new();
                let p = ps.bind(&mut g);
                let (a, b, gain, r) = (p[0], p[1], p[2], p[3]);
                let x = g.mul(a, b).unwrap();
                let x = g.sub(x, a).unwrap();
                let ln = g.layer_norm(x, gain, gain).unwrap();
                let c = g.concat(ln, b, 1).unwrap();
                let c = g.add_row(c, r).unwrap();
                let t = g.transpose(c).unwrap();
                let sl = g.slice_rows(t, 1, 4).unwrap();
                let sc = g.slice_cols(sl, 1, 2).unwrap();
                let e = g.softmax_rows(sc).unwrap();
                let rr = g.repeat_rows(r, 2).unwrap();
                let rr = g.slice_cols(rr, 0, 2).unwrap();
                let rr = g.sigmoid(rr).unwrap();
                let rn = g.row_normalize(rr).unwrap();
                let e2 = g.matmul_bt(e, rn).unwrap();
                let e2 = g.relu(e2).unwrap();
                let e2 = g.scale(e2, 0.7).unwrap();
                let m = g.mean(e2).unwrap();
                let s2 = g.sum(e).unwrap();
                let loss = g.add(m, s2).unwrap();
                let v = g.value(loss).item();
                let grads = if want {
                    let gr = g.backward(loss).unwrap();
                    p.iter().map(|&v| gr.get(v).unwrap().clone()).collect()
                } else {
                    Vec::new()
                };
                (v, grads)
            };
            let (_, analytic) = f(&ps, true);
            let report = finite_diff_check(
                &mut ps,
                &analytic,
                |ps| Ok(f(ps, false).0),
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {s}: {report:?}");
        }
    }

    #[test]
    fn sampled_coordinates_are_bounded() {
        let mut ps = ParamStore::<f64>::new();
        ps.add("x", Tensor::vector(vec![1.0; 10]));
        let analytic = vec![Tensor::vector(vec![2.0; 10])];
        let opts = GradCheckOptions {
            per_tensor: Some(3),
            ..Default::default()
        };
        let report = finite_diff_check(
            &mut ps,
            &analytic,
            |ps| Ok(ps.tensors()[0].data().iter().map(|x| x * x).sum()),
            &opts,
        )
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-8);
    }
}
