use std::sync::Arc;

use rayon::prelude::*;

use super::eval::{backward_chunk, check_queries, forward_all, ChunkCache, Ctx};
use super::{AttentionBundle, QueryMasks, Result, RuleSpaceConfig, RuleSpaceError};
use crate::diffmath::{CustomOp, Graph, Scalar, Tensor, TensorError, Var};
use crate::kb::{AdjacencyStore, Query};

/// Graph handles of every attention, laid out like [`AttentionBundle`].
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSpaceVars {
    pub s_phi: Var,
    pub s_psi: Var,
    pub s_psi2: Var,
    pub s_f: Vec<Var>,
    pub s_f2: Vec<Var>,
    pub s_o: Var,
}

impl RuleSpaceVars {
    /// Canonical order, matching [`AttentionBundle::tensors`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut v = vec![self.s_phi, self.s_psi, self.s_psi2];
        for (a, b) in self.s_f.iter().zip(&self.s_f2) {
            v.push(*a);
            v.push(*b);
        }
        v.push(self.s_o);
        v
    }
}

fn to_tensor_error(e: RuleSpaceError) -> TensorError {
    match e {
        RuleSpaceError::Tensor(t) => t,
        other => TensorError::Invalid(other.to_string()),
    }
}

struct RuleSpaceOp<T: Scalar> {
    store: Arc<AdjacencyStore>,
    cfg: RuleSpaceConfig,
    queries: Vec<Query>,
    masks: Option<QueryMasks>,
    caches: Vec<ChunkCache<T>>,
}

fn bundle_of<T: Scalar>(inputs: &[&Tensor<T>]) -> std::result::Result<AttentionBundle<T>, TensorError> {
    AttentionBundle::from_tensors(inputs.iter().map(|t| (*t).clone()).collect()).map_err(to_tensor_error)
}

impl<T: Scalar> CustomOp<T> for RuleSpaceOp<T> {
    fn name(&self) -> &'static str {
        "rule_space"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> std::result::Result<Tensor<T>, TensorError> {
        let bundle = bundle_of(inputs)?;
        let ctx = Ctx::new(&self.store, &self.cfg, &bundle).map_err(to_tensor_error)?;
        self.caches = forward_all(&ctx, &self.queries, self.masks.as_ref(), true);
        let scores: Vec<T> = self.caches.iter().flat_map(|c| c.scores.iter().copied()).collect();
        Tensor::new(&[1, scores.len()], scores)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> std::result::Result<Vec<Option<Tensor<T>>>, TensorError> {
        let bundle = bundle_of(inputs)?;
        let ctx = Ctx::new(&self.store, &self.cfg, &bundle).map_err(to_tensor_error)?;
        let g = grad.data();
        let mut offsets = Vec::with_capacity(self.caches.len());
        let mut lo = 0;
        for c in &self.caches {
            offsets.push(lo);
            lo += c.scores.len();
        }
        let parts: Vec<AttentionBundle<T>> = self
            .caches
            .par_iter()
            .zip(offsets.par_iter())
            .map(|(c, &lo)| backward_chunk(&ctx, c, &g[lo..lo + c.scores.len()]))
            .collect();
        // Summed in chunk order so results do not depend on scheduling.
        let mut total = bundle.zeros_like();
        for p in &parts {
            total.add_assign(p);
        }
        Ok(total.tensors().into_iter().map(|t| Some(t.clone())).collect())
    }
}

/// Records the rule-space scores of `queries` as a `1 × b` node whose
/// inputs are the attention variables. The adjoint is hand-written, so
/// gradients never pass through per-hop graph nodes.
pub fn rule_space_scores<T: Scalar>(
    g: &mut Graph<T>,
    store: Arc<AdjacencyStore>,
    cfg: &RuleSpaceConfig,
    vars: &RuleSpaceVars,
    queries: &[Query],
    masks: Option<QueryMasks>,
) -> Result<Var> {
    check_queries(&store, queries)?;
    if let Some(m) = &masks {
        if m.len() != queries.len() {
            return Err(RuleSpaceError::Config("mask count differs from query count".into()));
        }
    }
    let op = RuleSpaceOp {
        store,
        cfg: cfg.clone(),
        queries: queries.to_vec(),
        masks,
        caches: Vec::new(),
    };
    Ok(g.custom(Box::new(op), &vars.ordered())?)
}
