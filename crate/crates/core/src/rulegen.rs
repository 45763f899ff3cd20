//! Query-independent attention generation.
//!
//! Three transformer stacks simulate evaluation on "dummy" embeddings. The
//! operator stack walks `T` steps from the argument embeddings, the
//! statement stack pairs statements with paths, and the formula stack
//! composes levels of conjunctions. The attention matrices they emit form an
//! [`AttentionBundle`]. Generation reads only the parameters and the target
//! predicate id, so every query of a target sees the same rule.

use rand::Rng;
use thiserror::Error;

use crate::diffmath::nn::{init_embedding, Attn, Linear};
use crate::diffmath::{Graph, ParamId, ParamStore, Scalar, Tensor, TensorError, Var};
use crate::rulespace::{AttentionBundle, RuleSpaceConfig, RuleSpaceError, RuleSpaceVars};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleGenError {
    #[error("predicate id {0} is not in the vocabulary")]
    UnknownPredicate(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    RuleSpace(#[from] RuleSpaceError),
}

pub type Result<T> = std::result::Result<T, RuleGenError>;

/// Parameter handles of the generator. Tensors live in [`ModelParams::store`].
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    predicates: ParamId,
    arg_first: ParamId,
    arg_second: ParamId,
    condition: Linear,
    role_op: ParamId,
    role_first: ParamId,
    role_second: ParamId,
    role_pos: ParamId,
    role_neg: ParamId,
    step_queries: ParamId,
    formula_first: Vec<ParamId>,
    formula_second: Vec<ParamId>,
    output_query: ParamId,
    op_call: Attn,
    op_select: Attn,
    stmt_first: Attn,
    stmt_second: Attn,
    stmt_fc: Linear,
    form_first: Attn,
    form_second: Attn,
    form_fc: Linear,
    form_out: Attn,
}

/// All learnable generator weights, shared by every target predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub cfg: RuleSpaceConfig,
    pub store: ParamStore<T>,
    layout: Layout,
}

/// A generated rule together with the intermediate embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOutput<T> {
    pub bundle: AttentionBundle<T>,
    /// `T × d` aggregated step outputs.
    pub v_phi: Tensor<T>,
    /// `K × d` statement embeddings.
    pub v_psi: Tensor<T>,
    /// `C × d` formula embeddings per level.
    pub v_f: Vec<Tensor<T>>,
    /// `1 × d` output embedding.
    pub v_o: Tensor<T>,
}

/// Graph handles of a generated rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedVars {
    pub attn: RuleSpaceVars,
    pub v_phi: Var,
    pub v_psi: Var,
    pub v_f: Vec<Var>,
    pub v_o: Var,
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh parameters for `cfg`, drawn from the initialization stream of
    /// `seed_value`.
    pub fn new(cfg: &RuleSpaceConfig, seed_value: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed_value, seed::stream::INIT, 0);
        Self::with_rng(cfg, &mut rng)
    }

    pub fn with_rng(cfg: &RuleSpaceConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let mut ps = ParamStore::new();
        fn emb<T: Scalar>(ps: &mut ParamStore<T>, name: &str, rows: usize, d: usize, rng: &mut impl Rng) -> ParamId {
            ps.add(name, init_embedding(rng, rows, d))
        }
        let predicates = emb(&mut ps, "embed.predicates", cfg.k, d, rng);
        let arg_first = emb(&mut ps, "embed.arg_first", 1, d, rng);
        let arg_second = emb(&mut ps, "embed.arg_second", 1, d, rng);
        let condition = Linear::new(&mut ps, "condition", 2 * d, d, rng);
        let role_op = emb(&mut ps, "role.operator", 1, d, rng);
        let role_first = emb(&mut ps, "role.first", 1, d, rng);
        let role_second = emb(&mut ps, "role.second", 1, d, rng);
        let role_pos = emb(&mut ps, "role.positive", 1, d, rng);
        let role_neg = emb(&mut ps, "role.negated", 1, d, rng);
        let step_queries = emb(&mut ps, "query.steps", cfg.t, d, rng);
        let levels = cfg.formula_levels();
        let mut formula_first = Vec::with_capacity(levels);
        let mut formula_second = Vec::with_capacity(levels);
        for l in 1..=levels {
            formula_first.push(emb(&mut ps, &format!("query.formula{l}.first"), cfg.c, d, rng));
            formula_second.push(emb(&mut ps, &format!("query.formula{l}.second"), cfg.c, d, rng));
        }
        let output_query = emb(&mut ps, "query.output", 1, d, rng);
        let layout = Layout {
            predicates,
            arg_first,
            arg_second,
            condition,
            role_op,
            role_first,
            role_second,
            role_pos,
            role_neg,
            step_queries,
            formula_first,
            formula_second,
            output_query,
            op_call: Attn::new(&mut ps, "op.call", d, rng)?,
            op_select: Attn::new(&mut ps, "op.select", d, rng)?,
            stmt_first: Attn::new(&mut ps, "stmt.first", d, rng)?,
            stmt_second: Attn::new(&mut ps, "stmt.second", d, rng)?,
            stmt_fc: Linear::new(&mut ps, "stmt.fc", 2 * d, d, rng),
            form_first: Attn::new(&mut ps, "form.first", d, rng)?,
            form_second: Attn::new(&mut ps, "form.second", d, rng)?,
            form_fc: Linear::new(&mut ps, "form.fc", 2 * d, d, rng),
            form_out: Attn::new(&mut ps, "form.out", d, rng)?,
        };
        Ok(Self {
            cfg: cfg.clone(),
            store: ps,
            layout,
        })
    }

    /// Same layout with different tensor values, e.g. a loaded checkpoint.
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != self.store.len() {
            return Err(
                TensorError::Invalid(format!("{} tensors for {} parameters", tensors.len(), self.store.len())).into(),
            );
        }
        let mut out = self.clone();
        for (slot, t) in out.store.tensors_mut().iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "with_tensors",
                    left: slot.shape().to_vec(),
                    right: t.shape().to_vec(),
                }
                .into());
            }
            *slot = t;
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Head counts of each transformer's three attention layers.
    pub fn layer_heads(&self) -> Vec<(&'static str, [usize; 3])> {
        let l = &self.layout;
        vec![
            ("op.call", l.op_call.layer_heads()),
            ("op.select", l.op_select.layer_heads()),
            ("stmt.first", l.stmt_first.layer_heads()),
            ("stmt.second", l.stmt_second.layer_heads()),
            ("form.first", l.form_first.layer_heads()),
            ("form.second", l.form_second.layer_heads()),
            ("form.out", l.form_out.layer_heads()),
        ]
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.cfg.k {
            return Err(RuleGenError::UnknownPredicate(target));
        }
        Ok(())
    }

    /// `Ĥ`: row `k` is `ReLU(W [h_k, h_target] + b)`.
    pub fn condition_embeddings(&self, g: &mut Graph<T>, p: &[Var], target: usize) -> Result<Var> {
        self.check_target(target)?;
        let h = p[self.layout.predicates.index()];
        let star = g.slice_rows(h, target, 1)?;
        let star = g.repeat_rows(star, self.cfg.k)?;
        let joined = g.concat(h, star, 1)?;
        let out = self.layout.condition.forward(g, p, joined)?;
        Ok(g.relu(out)?)
    }

    /// One operator step: the `K` operator calls on the previous step's
    /// outputs, then aggregation by the step query. Returns the call
    /// outputs `V̂⁽ᵗ⁾`, the aggregate `v⁽ᵗ⁾` and the attention `s⁽ᵗ⁾`.
    /// The call's own attention matrix is not used by the rule space.
    pub fn operator_step(
        &self,
        g: &mut Graph<T>,
        p: &[Var],
        q_hat: Var,
        prev: Var,
        step: usize,
    ) -> Result<(Var, Var, Var)> {
        let l = &self.layout;
        let (calls, _) = l.op_call.forward(g, p, q_hat, prev)?;
        let q = g.slice_rows(p[l.step_queries.index()], step, 1)?;
        let (v, s) = l.op_select.forward(g, p, q, calls)?;
        Ok((calls, v, s))
    }

    /// Returns `(S_φ, V_φ)`, both with `T` rows.
    pub fn operator_search(&self, g: &mut Graph<T>, p: &[Var], h_hat: Var) -> Result<(Var, Var)> {
        let l = &self.layout;
        let q_hat = g.add_row(h_hat, p[l.role_op.index()])?;
        let mut prev = g.concat(p[l.arg_first.index()], p[l.arg_second.index()], 0)?;
        let (mut s_all, mut v_all): (Option<Var>, Option<Var>) = (None, None);
        for t in 0..self.cfg.t {
            let (calls, v, s) = self.operator_step(g, p, q_hat, prev, t)?;
            prev = calls;
            s_all = Some(match s_all {
                Some(acc) => g.concat(acc, s, 0)?,
                None => s,
            });
            v_all = Some(match v_all {
                Some(acc) => g.concat(acc, v, 0)?,
                None => v,
            });
        }
        Ok((s_all.expect("T ≥ 1"), v_all.expect("T ≥ 1")))
    }

    /// Returns `(S_ψ, S′_ψ, V_ψ)`.
    pub fn statement_search(&self, g: &mut Graph<T>, p: &[Var], h_hat: Var, v_phi: Var) -> Result<(Var, Var, Var)> {
        let l = &self.layout;
        let q1 = g.add_row(h_hat, p[l.role_first.index()])?;
        let q2 = g.add_row(h_hat, p[l.role_second.index()])?;
        let (o1, s1) = l.stmt_first.forward(g, p, q1, v_phi)?;
        let (o2, s2) = l.stmt_second.forward(g, p, q2, v_phi)?;
        let joined = g.concat(o1, o2, 1)?;
        let v = l.stmt_fc.forward(g, p, joined)?;
        Ok((s1, s2, g.relu(v)?))
    }

    /// Returns per-level `(S_f, S′_f, V_f)` and the output `(s_o, v_o)`.
    #[allow(clippy::type_complexity)]
    pub fn formula_search(&self, g: &mut Graph<T>, p: &[Var], v_psi: Var) -> Result<(Vec<(Var, Var, Var)>, Var, Var)> {
        let l = &self.layout;
        let mut levels = Vec::with_capacity(self.cfg.formula_levels());
        let mut prev = v_psi;
        let mut pool = v_psi;
        for lvl in 0..self.cfg.formula_levels() {
            let pos = g.add_row(prev, p[l.role_pos.index()])?;
            let neg = g.add_row(prev, p[l.role_neg.index()])?;
            let both = g.concat(pos, neg, 0)?;
            let (o1, s1) = l.form_first.forward(g, p, p[l.formula_first[lvl].index()], both)?;
            let (o2, s2) = l.form_second.forward(g, p, p[l.formula_second[lvl].index()], both)?;
            let joined = g.concat(o1, o2, 1)?;
            let v = l.form_fc.forward(g, p, joined)?;
            let v = g.relu(v)?;
            pool = g.concat(pool, v, 0)?;
            levels.push((s1, s2, v));
            prev = v;
        }
        let (v_o, s_o) = l.form_out.forward(g, p, p[l.output_query.index()], pool)?;
        Ok((levels, s_o, v_o))
    }

    /// Records the whole generator on `g`. `p` comes from binding
    /// [`ModelParams::store`].
    pub fn generate_vars(&self, g: &mut Graph<T>, p: &[Var], target: usize) -> Result<GeneratedVars> {
        let h_hat = self.condition_embeddings(g, p, target)?;
        let (s_phi, v_phi) = self.operator_search(g, p, h_hat)?;
        let (s_psi, s_psi2, v_psi) = self.statement_search(g, p, h_hat, v_phi)?;
        let (levels, s_o, v_o) = self.formula_search(g, p, v_psi)?;
        Ok(GeneratedVars {
            attn: RuleSpaceVars {
                s_phi,
                s_psi,
                s_psi2,
                s_f: levels.iter().map(|l| l.0).collect(),
                s_f2: levels.iter().map(|l| l.1).collect(),
                s_o,
            },
            v_phi,
            v_psi,
            v_f: levels.iter().map(|l| l.2).collect(),
            v_o,
        })
    }

    /// The rule for `target`, evaluated outside any training graph.
    pub fn generate(&self, target: usize) -> Result<GeneratorOutput<T>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let vars = self.generate_vars(&mut g, &p, target)?;
        let a = &vars.attn;
        let bundle = AttentionBundle {
            s_phi: g.value(a.s_phi).clone(),
            s_psi: g.value(a.s_psi).clone(),
            s_psi2: g.value(a.s_psi2).clone(),
            s_f: a.s_f.iter().map(|&v| g.value(v).clone()).collect(),
            s_f2: a.s_f2.iter().map(|&v| g.value(v).clone()).collect(),
            s_o: g.value(a.s_o).clone(),
        };
        bundle.check_shapes(&self.cfg)?;
        Ok(GeneratorOutput {
            bundle,
            v_phi: g.value(vars.v_phi).clone(),
            v_psi: g.value(vars.v_psi).clone(),
            v_f: vars.v_f.iter().map(|&v| g.value(v).clone()).collect(),
            v_o: g.value(vars.v_o).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, t: usize, l: usize, c: usize) -> RuleSpaceConfig {
        RuleSpaceConfig::new(k, t, l, c, 8)
    }

    fn run<R>(m: &ModelParams<f64>, f: impl FnOnce(&mut Graph<f64>, &[Var]) -> R) -> (Graph<f64>, R) {
        let mut g = Graph::new();
        let p = m.store.bind(&mut g);
        let r = f(&mut g, &p);
        (g, r)
    }

    #[test]
    fn condition_embedding_contract() {
        let m = ModelParams::<f64>::new(&cfg(3, 2, 0, 1), 0).unwrap();
        let (g, (a, b, c)) = run(&m, |g, p| {
            (
                m.condition_embeddings(g, p, 0).unwrap(),
                m.condition_embeddings(g, p, 0).unwrap(),
                m.condition_embeddings(g, p, 1).unwrap(),
            )
        });
        assert_eq!(g.value(a).shape(), &[3, 8]);
        assert_eq!(g.value(a), g.value(b));
        assert_ne!(g.value(a), g.value(c));
        let (_, e) = run(&m, |g, p| m.condition_embeddings(g, p, 3));
        assert_eq!(e.unwrap_err(), RuleGenError::UnknownPredicate(3));
    }

    #[test]
    fn operator_search_shapes() {
        let m = ModelParams::<f64>::new(&cfg(4, 2, 0, 1), 1).unwrap();
        let out = m.generate(0).unwrap();
        assert_eq!(out.bundle.s_phi.shape(), &[2, 4]);
        assert_eq!(out.v_phi.shape(), &[2, 8]);
        for i in 0..2 {
            let s: f64 = out.bundle.s_phi.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let single = ModelParams::<f64>::new(&cfg(1, 3, 0, 1), 1)
            .unwrap()
            .generate(0)
            .unwrap();
        assert!(single.bundle.s_phi.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn step_output_feeds_next_step() {
        let m = ModelParams::<f64>::new(&cfg(4, 2, 0, 1), 2).unwrap();
        let second_row = |perturb: f64| {
            let (g, s2) = run(&m, |g, p| {
                let h_hat = m.condition_embeddings(g, p, 0).unwrap();
                let l = &m.layout;
                let q_hat = g.add_row(h_hat, p[l.role_op.index()]).unwrap();
                let v0 = g.concat(p[l.arg_first.index()], p[l.arg_second.index()], 0).unwrap();
                let (calls, _, _) = m.operator_step(g, p, q_hat, v0, 0).unwrap();
                let bump = g.constant(Tensor::filled(&[4, 8], perturb));
                let bump = g.add(calls, bump).unwrap();
                let (_, _, s2) = m.operator_step(g, p, q_hat, bump, 1).unwrap();
                s2
            });
            g.value(s2).clone()
        };
        assert_ne!(second_row(0.0), second_row(0.5));
    }

    #[test]
    fn statement_search_contract() {
        let m = ModelParams::<f64>::new(&cfg(3, 2, 0, 1), 3).unwrap();
        let out = m.generate(1).unwrap();
        assert_eq!(out.bundle.s_psi.shape(), &[3, 2]);
        assert_eq!(out.bundle.s_psi2.shape(), &[3, 2]);
        assert_eq!(out.v_psi.shape(), &[3, 8]);
        for i in 0..3 {
            let s: f64 = out.bundle.s_psi.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert_ne!(out.bundle.s_psi, out.bundle.s_psi2);
    }

    #[test]
    fn equal_encodings_and_weights_give_equal_statement_attentions() {
        let mut m = ModelParams::<f64>::new(&cfg(3, 2, 0, 1), 4).unwrap();
        let names: Vec<String> = m.store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names.iter().filter(|n| n.starts_with("stmt.first.")) {
            let src = m.store.by_name(name).unwrap().clone();
            let dst = m.store.id(&name.replacen("stmt.first.", "stmt.second.", 1)).unwrap();
            *m.store.get_mut(dst) = src;
        }
        let e = m.store.by_name("role.first").unwrap().clone();
        let id = m.store.id("role.second").unwrap();
        *m.store.get_mut(id) = e;
        let out = m.generate(0).unwrap();
        assert_eq!(out.bundle.s_psi, out.bundle.s_psi2);
    }

    #[test]
    fn formula_search_shapes() {
        let m = ModelParams::<f64>::new(&cfg(3, 2, 0, 2), 5).unwrap();
        let out = m.generate(0).unwrap();
        assert!(out.bundle.s_f.is_empty());
        assert_eq!(out.bundle.s_o.shape(), &[1, 3]);

        let m = ModelParams::<f64>::new(&cfg(4, 2, 2, 4), 5).unwrap();
        let out = m.generate(0).unwrap();
        assert_eq!(out.bundle.s_f[0].shape(), &[4, 8]);
        assert_eq!(out.bundle.s_o.shape(), &[1, 8]);
        let s: f64 = out.bundle.s_o.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        out.bundle.validate(&m.cfg).unwrap();
    }

    #[test]
    fn generation_is_deterministic_and_target_specific() {
        let c = cfg(4, 2, 3, 2);
        let m = ModelParams::<f64>::new(&c, 6).unwrap();
        assert_eq!(m.generate(0).unwrap(), m.generate(0).unwrap());
        assert_ne!(m.generate(0).unwrap().bundle, m.generate(1).unwrap().bundle);
        assert_eq!(ModelParams::<f64>::new(&c, 6).unwrap(), m);
        m.generate(2).unwrap().bundle.validate(&c).unwrap();
    }

    #[test]
    fn architecture_conformance() {
        let m = ModelParams::<f32>::new(&cfg(3, 2, 2, 2), 0).unwrap();
        let heads = m.layer_heads();
        assert_eq!(heads.len(), 7);
        for (_, h) in heads {
            assert_eq!(h, [4, 4, 1]);
        }
    }
}
