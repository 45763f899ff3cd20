//! Rule scoring by explicit path enumeration.
//!
//! This is the independent reference for the matrix evaluator. It walks the
//! fact lists one path at a time, counting each path that ends at an entity,
//! and shares no code with the rule-space module beyond the sigmoid.

use std::collections::HashMap;

use super::{ExtractError, Formula, OpRef, PathAst, PathSource, Result, RuleAst, StatementAst};
use crate::diffmath::sigmoid;
use crate::kb::{Arity, KnowledgeBase, PredicateKind, Query};

pub const DEFAULT_ORACLE_LIMIT: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    /// Largest knowledge base, in entities, the oracle accepts.
    pub limit: usize,
    pub temperature: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            limit: DEFAULT_ORACLE_LIMIT,
            temperature: 1.0,
        }
    }
}

struct Walker<'a> {
    kb: &'a KnowledgeBase,
    /// Per base predicate: outgoing and incoming neighbour lists.
    out: Vec<Vec<Vec<usize>>>,
    inc: Vec<Vec<Vec<usize>>>,
}

impl<'a> Walker<'a> {
    fn new(kb: &'a KnowledgeBase) -> Self {
        let n = kb.num_entities();
        let p = kb.predicates.len();
        let mut out = vec![vec![Vec::new(); n]; p];
        let mut inc = vec![vec![Vec::new(); n]; p];
        for f in &kb.facts {
            out[f.predicate][f.subject].push(f.object);
            inc[f.predicate][f.object].push(f.subject);
        }
        Self { kb, out, inc }
    }

    fn holds_unary(&self, p: usize, e: usize) -> bool {
        self.out[p][e].contains(&e)
    }

    /// Entities one hop from `e`; unary operators keep `e` if it belongs.
    fn step(&self, op: OpRef, e: usize) -> Vec<usize> {
        match op {
            OpRef::Identity => vec![e],
            OpRef::Pred(p) if self.kb.predicates.arity(p) == Arity::Unary => {
                if self.holds_unary(p, e) {
                    vec![e]
                } else {
                    Vec::new()
                }
            }
            OpRef::Pred(p) => self.out[p][e].clone(),
            OpRef::Inverse(p) => self.inc[p][e].clone(),
        }
    }

    /// Depth-first enumeration of every path, tallying path ends.
    fn walk(&self, ops: &[OpRef], e: usize, ends: &mut HashMap<usize, f64>) {
        match ops.split_first() {
            None => *ends.entry(e).or_insert(0.0) += 1.0,
            Some((&op, rest)) => {
                for next in self.step(op, e) {
                    self.walk(rest, next, ends);
                }
            }
        }
    }

    fn path_ends(&self, path: &PathAst, q: &Query) -> HashMap<usize, f64> {
        let mut ends = HashMap::new();
        match path.source {
            PathSource::X => self.walk(&path.ops, q.subject, &mut ends),
            PathSource::XPrime => self.walk(&path.ops, q.object, &mut ends),
            PathSource::Unary(u) => {
                for e in 0..self.kb.num_entities() {
                    if self.holds_unary(u, e) {
                        self.walk(&path.ops, e, &mut ends);
                    }
                }
            }
        }
        ends
    }

    /// Number of groundings of the statement.
    fn count(&self, s: &StatementAst, q: &Query) -> f64 {
        match s.args.as_slice() {
            [only] => {
                let ends = self.path_ends(only, q);
                ends.iter()
                    .filter(|(&e, _)| self.related(s.predicate, e, e))
                    .map(|(_, c)| c)
                    .sum()
            }
            [first, second] => {
                let a = self.path_ends(first, q);
                let b = self.path_ends(second, q);
                let mut total = 0.0;
                for (&i, &ca) in &a {
                    for (&j, &cb) in &b {
                        if self.related(s.predicate, i, j) {
                            total += ca * cb;
                        }
                    }
                }
                total
            }
            _ => 0.0,
        }
    }

    fn related(&self, op: OpRef, i: usize, j: usize) -> bool {
        match op {
            OpRef::Identity => i == j,
            OpRef::Pred(p) => self.out[p][i].contains(&j),
            OpRef::Inverse(p) => self.out[p][j].contains(&i),
        }
    }

    fn value(&self, f: &Formula, q: &Query, tau: f64) -> f64 {
        match f {
            Formula::Leaf(s) => sigmoid(self.count(s, q) / tau),
            Formula::Not(x) => 1.0 - self.value(x, q, tau),
            Formula::And(a, b) => self.value(a, q, tau) * self.value(b, q, tau),
        }
    }
}

fn check(rule: &RuleAst, kb: &KnowledgeBase, opts: &OracleOptions) -> Result<()> {
    let n = kb.num_entities();
    if n > opts.limit {
        return Err(ExtractError::KbTooLarge {
            entities: n,
            limit: opts.limit,
        });
    }
    let base = |p: usize| p < kb.predicates.len() && kb.predicates.get(p).kind == PredicateKind::Base;
    for s in rule.formula.leaves() {
        let mut ids = Vec::new();
        for p in &s.args {
            if let PathSource::Unary(u) = p.source {
                ids.push(u);
            }
        }
        for o in s.args.iter().flat_map(|p| p.ops.iter()).chain([&s.predicate]) {
            if let OpRef::Pred(p) | OpRef::Inverse(p) = *o {
                ids.push(p);
            }
        }
        if let Some(&bad) = ids.iter().find(|&&p| !base(p)) {
            return Err(ExtractError::UnknownPredicate(bad));
        }
    }
    Ok(())
}

/// Soft value of `rule` on `query` against the facts of `kb`.
pub fn grounding_oracle(rule: &RuleAst, kb: &KnowledgeBase, query: &Query, opts: &OracleOptions) -> Result<f64> {
    Ok(oracle_scores(rule, kb, std::slice::from_ref(query), opts)?[0])
}

/// [`grounding_oracle`] for many queries, sharing the neighbour lists.
pub fn oracle_scores(rule: &RuleAst, kb: &KnowledgeBase, queries: &[Query], opts: &OracleOptions) -> Result<Vec<f64>> {
    check(rule, kb, opts)?;
    let n = kb.num_entities();
    if let Some(entity) = queries.iter().flat_map(|q| [q.subject, q.object]).find(|&e| e >= n) {
        return Err(ExtractError::EntityOutOfRange { entity, entities: n });
    }
    let walker = Walker::new(kb);
    Ok(queries
        .iter()
        .map(|q| walker.value(&rule.formula, q, opts.temperature))
        .collect())
}
