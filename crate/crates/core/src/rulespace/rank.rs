//! Scores of every candidate entity for one fixed query argument.
//!
//! A query `(x, ·)` needs `z_k(x′) = w · B_k(x′)` for all `x′` at once. With
//! `C_t = Σ_j S_φ[t, j] Op_j` and `B_k(x′) = Σ_t s[t] C_t ⋯ C_1 e_{x′}`,
//! the row vector `wᵀ B_k` is produced for all `x′` by the recurrence
//! `r ← C_tᵀ(r + s[t] w)` for `t = T … 1`. The cost matches one query.

use super::eval::{check_queries, score_from_statements, Ctx};
use super::{AttentionBundle, Result, RuleSpaceConfig, RuleSpaceError};
use crate::diffmath::{sigmoid, Scalar, Tensor};
use crate::kb::{AdjacencyStore, Query};

impl<T: Scalar> Ctx<'_, T> {
    /// `Σ_t s[t] (C_1ᵀ ⋯ C_tᵀ) w`, where `s` is row `k` of a path attention.
    fn horner(&self, s: &Tensor<T>, k: usize, w: &[T]) -> Vec<T> {
        let n = self.n();
        let mut r = vec![T::zero(); n];
        for t in (0..self.cfg.t).rev() {
            let c = s.at(k, t);
            let inner: Vec<T> = r.iter().zip(w).map(|(&a, &b)| a + c * b).collect();
            let mut next = vec![T::zero(); n];
            for j in 0..self.cfg.k {
                let coef = self.bundle.s_phi.at(t, j);
                if coef != T::zero() {
                    self.apply(j, &[], &inner, &mut next, 1, coef, true);
                }
            }
            r = next;
        }
        r
    }

    /// Forward path vectors `U⁽⁰⁾ … U⁽ᵀ⁾` from one entity.
    fn path_from(&self, x: usize) -> Vec<Vec<T>> {
        let n = self.n();
        let mut us = vec![{
            let mut v = vec![T::zero(); n];
            v[x] = T::one();
            v
        }];
        for t in 0..self.cfg.t {
            let mut out = vec![T::zero(); n];
            for j in 0..self.cfg.k {
                let c = self.bundle.s_phi.at(t, j);
                if c != T::zero() {
                    self.apply(j, &[], &us[t], &mut out, 1, c, false);
                }
            }
            us.push(out);
        }
        us
    }

    fn path_mix(&self, s: &Tensor<T>, k: usize, us: &[Vec<T>]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n()];
        for t in 0..self.cfg.t {
            let c = s.at(k, t);
            for (o, &x) in out.iter_mut().zip(&us[t + 1]) {
                *o += c * x;
            }
        }
        out
    }

    /// Lays per-statement candidate vectors out as a `K × n` block and
    /// finishes the formula levels and output.
    fn finish(&self, zs: Vec<Vec<T>>) -> Vec<T> {
        let n = self.n();
        let psi: Vec<T> = zs.into_iter().flatten().map(|z| sigmoid(z * self.inv_tau)).collect();
        score_from_statements(self.cfg, self.bundle, psi, n)
    }
}

fn check_entity(x: usize, n: usize) -> Result<()> {
    if x >= n {
        return Err(RuleSpaceError::EntityOutOfRange { index: x, dim: n });
    }
    Ok(())
}

/// Scores of `(x, x′)` for every `x′`.
pub fn tail_scores<T: Scalar>(
    store: &AdjacencyStore,
    cfg: &RuleSpaceConfig,
    bundle: &AttentionBundle<T>,
    x: usize,
) -> Result<Vec<T>> {
    let ctx = Ctx::new(store, cfg, bundle)?;
    check_entity(x, ctx.n())?;
    let us = ctx.path_from(x);
    let zs = (0..cfg.k)
        .map(|k| {
            let w = if store.is_unary(k) {
                ctx.diag[k].clone()
            } else {
                let a = ctx.path_mix(&bundle.s_psi, k, &us);
                let mut w = vec![T::zero(); ctx.n()];
                ctx.apply(k, &[], &a, &mut w, 1, T::one(), false);
                w
            };
            ctx.horner(&bundle.s_psi2, k, &w)
        })
        .collect();
    Ok(ctx.finish(zs))
}

/// Scores of `(x, x′)` for every `x`.
pub fn head_scores<T: Scalar>(
    store: &AdjacencyStore,
    cfg: &RuleSpaceConfig,
    bundle: &AttentionBundle<T>,
    x2: usize,
) -> Result<Vec<T>> {
    let ctx = Ctx::new(store, cfg, bundle)?;
    check_entity(x2, ctx.n())?;
    let n = ctx.n();
    let us = ctx.path_from(x2);
    let zs = (0..cfg.k)
        .map(|k| {
            let b = ctx.path_mix(&bundle.s_psi2, k, &us);
            if store.is_unary(k) {
                let z = ctx.diag[k].iter().zip(&b).fold(T::zero(), |acc, (&d, &v)| acc + d * v);
                vec![z; n]
            } else {
                let mut w = vec![T::zero(); n];
                ctx.apply(k, &[], &b, &mut w, 1, T::one(), true);
                ctx.horner(&bundle.s_psi, k, &w)
            }
        })
        .collect();
    Ok(ctx.finish(zs))
}

/// Dense `n × n` score matrix, row `x`, column `x′`. For small
/// knowledge bases and tests only.
pub fn all_pair_scores<T: Scalar>(
    store: &AdjacencyStore,
    cfg: &RuleSpaceConfig,
    bundle: &AttentionBundle<T>,
) -> Result<Tensor<T>> {
    let n = store.num_entities();
    let mut out = Tensor::zeros(&[n, n]);
    for x in 0..n {
        for (j, s) in tail_scores(store, cfg, bundle, x)?.into_iter().enumerate() {
            out.set(x, j, s);
        }
    }
    Ok(out)
}

/// Scores of `(y, y)` for every entity, as used by unary targets.
pub fn diagonal_scores<T: Scalar>(
    store: &AdjacencyStore,
    cfg: &RuleSpaceConfig,
    bundle: &AttentionBundle<T>,
    predicate: usize,
) -> Result<Vec<T>> {
    let queries: Vec<Query> = (0..store.num_entities())
        .map(|y| Query {
            subject: y,
            predicate,
            object: y,
            label: false,
        })
        .collect();
    check_queries(store, &queries)?;
    Ok(super::score_queries(store, cfg, bundle, &queries)?.scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{build_matrices, gen_even_successor};
    use crate::seed;

    fn random_bundle(cfg: &RuleSpaceConfig, s: u64) -> AttentionBundle<f64> {
        AttentionBundle::random(cfg, &mut seed::rng(s, seed::stream::GRADCHECK, 1))
    }

    #[test]
    fn ranking_matches_pairwise_scores() {
        let (kb, _) = gen_even_successor(7, 0.0).unwrap();
        let store = build_matrices(&kb, true, true);
        let cfg = RuleSpaceConfig::new(store.len(), 3, 3, 2, 8);
        let succ = kb.predicates.id("Succ").unwrap();
        let n = store.num_entities();
        for s in 0..3 {
            let b = random_bundle(&cfg, s);
            let mut queries = Vec::new();
            for x in 0..n {
                for y in 0..n {
                    queries.push(Query {
                        subject: x,
                        predicate: succ,
                        object: y,
                        label: false,
                    });
                }
            }
            let pair = super::super::score_queries(&store, &cfg, &b, &queries).unwrap().scores;
            for x in 0..n {
                let tail = tail_scores(&store, &cfg, &b, x).unwrap();
                let head = head_scores(&store, &cfg, &b, x).unwrap();
                for y in 0..n {
                    assert!((tail[y] - pair[x * n + y]).abs() < 1e-12);
                    assert!((head[y] - pair[y * n + x]).abs() < 1e-12);
                }
            }
            let dense = all_pair_scores(&store, &cfg, &b).unwrap();
            assert!((dense.at(2, 3) - pair[2 * n + 3]).abs() < 1e-12);
            let diag = diagonal_scores(&store, &cfg, &b, succ).unwrap();
            for y in 0..n {
                assert!((diag[y] - pair[y * n + y]).abs() < 1e-12);
            }
        }
    }
}
