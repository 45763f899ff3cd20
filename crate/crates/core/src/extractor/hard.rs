//! Scoring and evaluation of explicit rules.
//!
//! A rule that fits one attention bundle is re-encoded and scored with the
//! sparse matrices; any other rule (paths rooted at a unary membership set,
//! paths that do not share a chain) falls back to the grounding oracle.
//! The two agree wherever both apply, so the choice only affects speed.

use std::collections::HashMap;

use super::oracle::oracle_scores;
use super::{encode, ExtractError, OracleOptions, Result, RuleAst};
use crate::evalmetrics::{accuracy, rank_queries, Corruption, KnownFacts, RankingResult};
use crate::kb::{AdjacencyStore, KnowledgeBase, Query};
use crate::rulespace::{
    diagonal_scores, head_scores, score_queries, tail_scores, AttentionBundle, RuleSpaceConfig, RuleSpaceError,
};

/// Scores at or below σ(0) = 0.5 mean no grounding; one grounding already
/// gives σ(1) ≈ 0.731. The threshold sits between the two.
pub const DEFAULT_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct HardMetrics {
    /// Fraction of queries whose thresholded score matches the label.
    pub accuracy: f64,
    /// Filtered ranks of the positive queries.
    pub ranking: RankingResult,
    /// `None` when there were no positive queries.
    pub mrr: Option<f64>,
    pub hits_at_10: Option<f64>,
    /// Rules scored by the oracle because they do not fit one bundle.
    pub oracle_rules: usize,
}

enum Scorer<'a> {
    Matrix(Box<AttentionBundle<f64>>),
    Oracle(&'a RuleAst),
}

struct Ctx<'a> {
    kb: &'a KnowledgeBase,
    store: &'a AdjacencyStore,
    cfg: &'a RuleSpaceConfig,
}

impl<'a> Ctx<'a> {
    fn new(kb: &'a KnowledgeBase, store: &'a AdjacencyStore, cfg: &'a RuleSpaceConfig) -> Result<Self> {
        if cfg.k != store.len() {
            return Err(RuleSpaceError::Config(format!(
                "config has K = {}, store has {} operators",
                cfg.k,
                store.len()
            ))
            .into());
        }
        if kb.num_entities() != store.num_entities() {
            return Err(RuleSpaceError::Config(format!(
                "knowledge base has {} entities, store has {}",
                kb.num_entities(),
                store.num_entities()
            ))
            .into());
        }
        Ok(Self { kb, store, cfg })
    }

    fn scorer<'r>(&self, rule: &'r RuleAst) -> Result<Scorer<'r>> {
        match encode::<f64>(rule, self.cfg, self.store.vocab()) {
            Ok(b) => Ok(Scorer::Matrix(Box::new(b))),
            Err(ExtractError::NotEncodable(_)) => Ok(Scorer::Oracle(rule)),
            Err(e) => Err(e),
        }
    }

    fn scores(&self, scorer: &Scorer<'_>, queries: &[Query]) -> Result<Vec<f64>> {
        match scorer {
            Scorer::Matrix(b) => Ok(score_queries(self.store, self.cfg, b, queries)?.scores),
            Scorer::Oracle(rule) => oracle_scores(rule, self.kb, queries, &oracle_options()),
        }
    }

    fn candidates(&self, scorer: &Scorer<'_>, c: Corruption) -> Result<Vec<f64>> {
        if let Scorer::Matrix(b) = scorer {
            let (store, cfg) = (self.store, self.cfg);
            return Ok(match c {
                Corruption::Tail { subject, .. } => tail_scores(store, cfg, b, subject)?,
                Corruption::Head { object, .. } => head_scores(store, cfg, b, object)?,
                Corruption::Unary { predicate } => diagonal_scores(store, cfg, b, predicate)?,
            });
        }
        let query = |subject, predicate, object| Query {
            subject,
            predicate,
            object,
            label: false,
        };
        let queries: Vec<Query> = (0..self.kb.num_entities())
            .map(|e| match c {
                Corruption::Tail { predicate, subject } => query(subject, predicate, e),
                Corruption::Head { predicate, object } => query(e, predicate, object),
                Corruption::Unary { predicate } => query(e, predicate, e),
            })
            .collect();
        self.scores(scorer, &queries)
    }
}

/// The oracle is only a fallback here, so it accepts any size.
fn oracle_options() -> OracleOptions {
    OracleOptions {
        limit: usize::MAX,
        ..OracleOptions::default()
    }
}

/// Hard scores of `rule` on `queries`. `store` must be built from the facts
/// of `kb`, with `cfg.k` operators.
pub fn hard_scores(
    rule: &RuleAst,
    kb: &KnowledgeBase,
    store: &AdjacencyStore,
    cfg: &RuleSpaceConfig,
    queries: &[Query],
) -> Result<Vec<f64>> {
    if queries.is_empty() {
        return Err(ExtractError::NoQueries);
    }
    let ctx = Ctx::new(kb, store, cfg)?;
    ctx.scores(&ctx.scorer(rule)?, queries)
}

/// Accuracy over all `queries` at `threshold`, and filtered ranking of the
/// positive ones against `known`. Each query is scored by the rule whose
/// head is its predicate.
pub fn evaluate_hard(
    rules: &[RuleAst],
    kb: &KnowledgeBase,
    store: &AdjacencyStore,
    cfg: &RuleSpaceConfig,
    queries: &[Query],
    known: &KnownFacts,
    threshold: f64,
) -> Result<HardMetrics> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ExtractError::Threshold(threshold));
    }
    if rules.is_empty() {
        return Err(ExtractError::NoRules);
    }
    if queries.is_empty() {
        return Err(ExtractError::NoQueries);
    }
    let ctx = Ctx::new(kb, store, cfg)?;
    let by_head: HashMap<usize, &RuleAst> = rules.iter().map(|r| (r.head, r)).collect();
    let mut scorers = HashMap::new();
    let mut oracle_rules = 0;
    for q in queries {
        if scorers.contains_key(&q.predicate) {
            continue;
        }
        let Some(rule) = by_head.get(&q.predicate) else {
            let name = if q.predicate < kb.predicates.len() {
                kb.predicates.name(q.predicate).to_string()
            } else {
                format!("#{}", q.predicate)
            };
            return Err(ExtractError::MissingRule(name));
        };
        let s = ctx.scorer(rule)?;
        oracle_rules += usize::from(matches!(s, Scorer::Oracle(_)));
        scorers.insert(q.predicate, s);
    }

    let mut predictions = vec![false; queries.len()];
    for (&p, scorer) in &scorers {
        let idx: Vec<usize> = (0..queries.len()).filter(|&i| queries[i].predicate == p).collect();
        let batch: Vec<Query> = idx.iter().map(|&i| queries[i]).collect();
        for (&i, s) in idx.iter().zip(ctx.scores(scorer, &batch)?) {
            predictions[i] = s > threshold;
        }
    }
    let labels: Vec<bool> = queries.iter().map(|q| q.label).collect();
    let accuracy = accuracy(&predictions, &labels)?;

    let ranking = rank_queries(
        queries,
        known,
        |p| store.is_unary(p),
        |c| {
            let p = match c {
                Corruption::Tail { predicate, .. }
                | Corruption::Head { predicate, .. }
                | Corruption::Unary { predicate } => predicate,
            };
            ctx.candidates(&scorers[&p], c)
        },
    )?;
    let (mrr, hits_at_10) = if ranking.ranks.is_empty() {
        (None, None)
    } else {
        (Some(ranking.mrr()?), Some(ranking.hits_at(10)?))
    };
    Ok(HardMetrics {
        accuracy,
        ranking,
        mrr,
        hits_at_10,
        oracle_rules,
    })
}
