//! Explicit rules from hardened attentions.
//!
//! [`extract`] reads a one-hot [`AttentionBundle`] back into a [`RuleAst`]:
//! the output attention picks a pooled formula, formula attentions unwind
//! into a tree of conjunctions and negations, and each leaf statement gets
//! its argument paths from the path and operator attentions. [`encode`] goes
//! the other way. Rules render in three text forms (see [`render`]) that
//! parse back losslessly, and [`grounding_oracle`] scores a rule by explicit
//! path enumeration without any matrix code.
//!
//! Identity hops are dropped from extracted paths: they do not change path
//! counts, and dropping them keeps rendered rules readable.

mod encode;
mod hard;
mod oracle;
mod parse;
mod render;

use std::fmt;

use thiserror::Error;

use crate::evalmetrics::MetricsError;
use crate::kb::{Arity, PredicateKind, PredicateTable, IDENTITY_NAME, INVERSE_SUFFIX};
use crate::rulespace::{AttentionBundle, RuleSpaceConfig, RuleSpaceError};
use crate::Scalar;

pub use encode::encode;
pub use hard::{evaluate_hard, hard_scores, HardMetrics, DEFAULT_THRESHOLD};
pub use oracle::{grounding_oracle, oracle_scores, OracleOptions, DEFAULT_ORACLE_LIMIT};
pub use parse::{parse_ast_form, parse_operator_form, parse_rule, parse_variable_form};
pub use render::{render, render_ast_form, render_operator_form, render_variable_form, RuleForm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("bundle is not one-hot; harden it first")]
    NotHardened,
    #[error("rule cannot be expressed as a single attention bundle: {0}")]
    NotEncodable(String),
    #[error("knowledge base has {entities} entities, above the oracle limit {limit}")]
    KbTooLarge { entities: usize, limit: usize },
    #[error("no rules to evaluate")]
    NoRules,
    #[error("no rule for target predicate `{0}`")]
    MissingRule(String),
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    Threshold(f64),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown predicate `{0}`")]
    UnknownName(String),
    #[error("predicate id {0} is not in the vocabulary")]
    UnknownPredicate(usize),
    #[error("entity id {entity} out of range for {entities} entities")]
    EntityOutOfRange { entity: usize, entities: usize },
    #[error("no queries to evaluate")]
    NoQueries,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    RuleSpace(#[from] RuleSpaceError),
}

pub type Result<T> = std::result::Result<T, ExtractError>;

/// An operator or statement predicate, independent of vocabulary layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpRef {
    /// A declared predicate, by base id.
    Pred(usize),
    /// The transpose of a binary base predicate.
    Inverse(usize),
    Identity,
}

impl OpRef {
    /// Interprets an id of an augmented vocabulary.
    pub fn from_id(vocab: &PredicateTable, id: usize) -> Self {
        match vocab.get(id).kind {
            PredicateKind::Base => OpRef::Pred(id),
            PredicateKind::Inverse { base } => OpRef::Inverse(base),
            PredicateKind::Identity => OpRef::Identity,
        }
    }

    /// The id of this operator in an augmented vocabulary, if present.
    pub fn to_id(self, vocab: &PredicateTable) -> Option<usize> {
        match self {
            OpRef::Pred(p) => (p < vocab.len() && vocab.get(p).kind == PredicateKind::Base).then_some(p),
            OpRef::Inverse(b) => {
                if b < vocab.len() && vocab.get(b).kind == PredicateKind::Base {
                    vocab.inverse_of(b)
                } else {
                    None
                }
            }
            OpRef::Identity => vocab.identity(),
        }
    }

    pub fn arity(self, preds: &PredicateTable) -> Arity {
        match self {
            OpRef::Pred(p) => preds.arity(p),
            _ => Arity::Binary,
        }
    }

    pub fn name(self, preds: &PredicateTable) -> String {
        match self {
            OpRef::Pred(p) => preds.name(p).to_string(),
            OpRef::Inverse(b) => format!("{}{}", preds.name(b), INVERSE_SUFFIX),
            OpRef::Identity => IDENTITY_NAME.to_string(),
        }
    }

    /// Resolves a rendered name against the base predicate table.
    pub fn from_name(preds: &PredicateTable, name: &str) -> Result<Self> {
        if name == IDENTITY_NAME {
            return Ok(OpRef::Identity);
        }
        let unknown = || ExtractError::UnknownName(name.to_string());
        if let Some(base) = name.strip_suffix(INVERSE_SUFFIX) {
            let id = preds.id(base).ok_or_else(unknown)?;
            if preds.arity(id) != Arity::Binary || preds.get(id).kind != PredicateKind::Base {
                return Err(unknown());
            }
            return Ok(OpRef::Inverse(id));
        }
        let id = preds.id(name).ok_or_else(unknown)?;
        if preds.get(id).kind != PredicateKind::Base {
            return Err(unknown());
        }
        Ok(OpRef::Pred(id))
    }

    pub fn inverse(self) -> Self {
        match self {
            OpRef::Pred(p) => OpRef::Inverse(p),
            OpRef::Inverse(p) => OpRef::Pred(p),
            OpRef::Identity => OpRef::Identity,
        }
    }
}

/// Where an argument path starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PathSource {
    /// The head's first variable.
    X,
    /// The head's second variable (equal to `X` for unary heads).
    XPrime,
    /// The membership set of a unary predicate, e.g. `φ_Clothing()`.
    Unary(usize),
}

/// Operators applied in order to the source.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PathAst {
    pub source: PathSource,
    pub ops: Vec<OpRef>,
}

/// A predicate applied to one (unary) or two (binary) argument paths.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StatementAst {
    pub predicate: OpRef,
    pub args: Vec<PathAst>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Leaf(StatementAst),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn negate(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Leaf(_) => 1,
            Formula::Not(x) => 1 + x.depth(),
            Formula::And(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&StatementAst> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a StatementAst>) {
        match self {
            Formula::Leaf(s) => out.push(s),
            Formula::Not(x) => x.collect_leaves(out),
            Formula::And(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
        }
    }
}

/// Argmax indices of the bundle a rule was extracted from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub s_phi: Vec<usize>,
    pub s_psi: Vec<usize>,
    pub s_psi2: Vec<usize>,
    pub s_f: Vec<Vec<usize>>,
    pub s_f2: Vec<Vec<usize>>,
    pub s_o: usize,
}

/// A rule `head(X, X′) ← formula`. Equality ignores provenance.
#[derive(Debug, Clone)]
pub struct RuleAst {
    pub head: usize,
    pub formula: Formula,
    pub provenance: Option<Provenance>,
}

impl PartialEq for RuleAst {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head && self.formula == other.formula
    }
}

impl RuleAst {
    pub fn new(head: usize, formula: Formula) -> Self {
        Self {
            head,
            formula,
            provenance: None,
        }
    }
}

/// Display with predicate ids only; use the render functions for names.
impl fmt::Display for OpRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpRef::Pred(p) => write!(f, "P{p}"),
            OpRef::Inverse(p) => write!(f, "P{p}{INVERSE_SUFFIX}"),
            OpRef::Identity => f.write_str(IDENTITY_NAME),
        }
    }
}

/// Reads the explicit rule out of a one-hot bundle for target `head`.
/// `vocab` is the augmented vocabulary the bundle was built over.
pub fn extract<T: Scalar>(
    bundle: &AttentionBundle<T>,
    cfg: &RuleSpaceConfig,
    vocab: &PredicateTable,
    head: usize,
) -> Result<RuleAst> {
    bundle.check_shapes(cfg)?;
    if !bundle.is_hard() {
        return Err(ExtractError::NotHardened);
    }
    if vocab.len() != cfg.k {
        return Err(RuleSpaceError::Config(format!(
            "vocabulary has {} operators, config has K = {}",
            vocab.len(),
            cfg.k
        ))
        .into());
    }
    if head >= vocab.base_count() {
        return Err(ExtractError::UnknownPredicate(head));
    }
    let prov = Provenance {
        s_phi: bundle.s_phi.argmax_rows(),
        s_psi: bundle.s_psi.argmax_rows(),
        s_psi2: bundle.s_psi2.argmax_rows(),
        s_f: bundle.s_f.iter().map(|t| t.argmax_rows()).collect(),
        s_f2: bundle.s_f2.iter().map(|t| t.argmax_rows()).collect(),
        s_o: bundle.s_o.argmax_rows()[0],
    };
    let chain: Vec<OpRef> = prov.s_phi.iter().map(|&k| OpRef::from_id(vocab, k)).collect();
    let path = |source: PathSource, len: usize| PathAst {
        source,
        ops: chain[..len].iter().copied().filter(|&o| o != OpRef::Identity).collect(),
    };
    let leaf = |k: usize| {
        let predicate = OpRef::from_id(vocab, k);
        let second = path(PathSource::XPrime, prov.s_psi2[k] + 1);
        let args = if vocab.is_unary(k) {
            vec![second]
        } else {
            vec![path(PathSource::X, prov.s_psi[k] + 1), second]
        };
        Formula::Leaf(StatementAst { predicate, args })
    };
    // Node `index` of level `level`; level 0 holds the statements.
    fn node(
        prov: &Provenance,
        cfg: &RuleSpaceConfig,
        leaf: &dyn Fn(usize) -> Formula,
        level: usize,
        index: usize,
    ) -> Formula {
        if level == 0 {
            return leaf(index);
        }
        let prev = cfg.level_input(level);
        let child = |i: usize| {
            if i < prev {
                node(prov, cfg, leaf, level - 1, i)
            } else {
                Formula::negate(node(prov, cfg, leaf, level - 1, i - prev))
            }
        };
        Formula::and(child(prov.s_f[level - 1][index]), child(prov.s_f2[level - 1][index]))
    }
    let (level, index) = if prov.s_o < cfg.k {
        (0, prov.s_o)
    } else {
        let p = prov.s_o - cfg.k;
        (p / cfg.c + 1, p % cfg.c)
    };
    let formula = node(&prov, cfg, &leaf, level, index);
    Ok(RuleAst {
        head,
        formula,
        provenance: Some(prov),
    })
}

#[cfg(test)]
mod tests;
