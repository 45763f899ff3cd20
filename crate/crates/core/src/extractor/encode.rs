use std::collections::HashMap;

use super::{ExtractError, Formula, OpRef, PathAst, PathSource, Result, RuleAst, StatementAst};
use crate::kb::PredicateTable;
use crate::rulespace::{AttentionBundle, RuleSpaceConfig};
use crate::{Scalar, Tensor};

fn not_encodable(msg: impl Into<String>) -> ExtractError {
    ExtractError::NotEncodable(msg.into())
}

fn one_hot_rows<T: Scalar>(picks: &[usize], cols: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[picks.len(), cols]);
    for (i, &j) in picks.iter().enumerate() {
        t.set(i, j, T::one());
    }
    t
}

/// Level of a node: leaves sit at 0, a conjunction one above its
/// children, and a negation at its child's level.
fn level_of(f: &Formula) -> Result<usize> {
    match f {
        Formula::Leaf(_) => Ok(0),
        Formula::Not(x) => level_of(x),
        Formula::And(a, b) => {
            let (la, lb) = (level_of(a)?, level_of(b)?);
            if la != lb {
                return Err(not_encodable("conjunction of formulas from different levels"));
            }
            Ok(la + 1)
        }
    }
}

/// An operator chain and the prefix length (1-based) of each path on it.
type Chain = (Vec<OpRef>, HashMap<Vec<OpRef>, usize>);

/// One shared operator chain whose identity-free prefixes give every path.
fn build_chain(paths: &[Vec<OpRef>], t: usize, identity: Option<usize>) -> Result<Chain> {
    let mut sorted: Vec<&Vec<OpRef>> = paths.iter().collect();
    sorted.sort_by_key(|p| p.len());
    sorted.dedup();
    let longest = sorted.last().map(|p| p.to_vec()).unwrap_or_default();
    for p in &sorted {
        if longest[..p.len()] != p[..] {
            return Err(not_encodable("argument paths are not prefixes of one operator chain"));
        }
    }
    let has_empty = sorted.first().is_some_and(|p| p.is_empty());
    let mut chain = Vec::with_capacity(t);
    if has_empty {
        if identity.is_none() {
            return Err(not_encodable("an empty path needs the Identity operator"));
        }
        chain.push(OpRef::Identity);
    }
    chain.extend(longest.iter().copied());
    if chain.len() > t {
        return Err(not_encodable(format!("path needs {} steps but T = {t}", chain.len())));
    }
    let shift = usize::from(has_empty);
    let lengths = sorted.iter().map(|p| ((*p).clone(), p.len() + shift)).collect();
    Ok((chain, lengths))
}

/// A one-hot bundle that scores exactly like `rule`. Fails when the rule
/// uses structure outside the rule space (paths rooted at unary
/// membership sets, paths that do not share one chain, conflicting uses of
/// a statement, mixed-level conjunctions, or more formulas than slots).
pub fn encode<T: Scalar>(rule: &RuleAst, cfg: &RuleSpaceConfig, vocab: &PredicateTable) -> Result<AttentionBundle<T>> {
    cfg.validate()?;
    if vocab.len() != cfg.k {
        return Err(not_encodable(format!(
            "vocabulary has {} operators, config has K = {}",
            vocab.len(),
            cfg.k
        )));
    }
    let top = level_of(&rule.formula)?;
    if top > cfg.formula_levels() {
        return Err(not_encodable(format!(
            "formula needs {top} levels, config has {}",
            cfg.formula_levels()
        )));
    }

    // Statements and their paths.
    let mut stmt_paths: HashMap<usize, (Option<Vec<OpRef>>, Vec<OpRef>)> = HashMap::new();
    let mut all_paths = Vec::new();
    for leaf in rule.formula.leaves() {
        let k = leaf
            .predicate
            .to_id(vocab)
            .ok_or_else(|| not_encodable(format!("operator {} not in the vocabulary", leaf.predicate)))?;
        let entry = statement_paths(leaf, vocab.is_unary(k))?;
        for p in entry.0.iter().chain(std::iter::once(&entry.1)) {
            all_paths.push(p.clone());
        }
        if let Some(old) = stmt_paths.insert(k, entry.clone()) {
            if old != entry {
                return Err(not_encodable("one statement used with two different argument paths"));
            }
        }
    }
    let (chain, lengths) = build_chain(&all_paths, cfg.t, vocab.identity())?;
    let mut phi = Vec::with_capacity(cfg.t);
    for op in &chain {
        phi.push(
            op.to_id(vocab)
                .ok_or_else(|| not_encodable(format!("operator {op} not in the vocabulary")))?,
        );
    }
    while phi.len() < cfg.t {
        phi.push(vocab.identity().unwrap_or(0));
    }
    let mut psi = vec![0; cfg.k];
    let mut psi2 = vec![0; cfg.k];
    for (&k, (first, second)) in &stmt_paths {
        if let Some(f) = first {
            psi[k] = lengths[f] - 1;
        }
        psi2[k] = lengths[second] - 1;
    }

    // Formula slots per level, in first-visit order.
    let levels = cfg.formula_levels();
    let mut slots: Vec<Vec<Formula>> = vec![Vec::new(); levels + 1];
    let mut picks: Vec<Vec<(usize, usize)>> = vec![Vec::new(); levels + 1];
    let out_index = assign(&rule.formula, vocab, cfg, &mut slots, &mut picks)?;
    let mut s_f = Vec::with_capacity(levels);
    let mut s_f2 = Vec::with_capacity(levels);
    for l in 1..=levels {
        let width = 2 * cfg.level_input(l);
        let mut first = vec![0; cfg.c];
        let mut second = vec![0; cfg.c];
        for (c, &(a, b)) in picks[l].iter().enumerate() {
            first[c] = a;
            second[c] = b;
        }
        s_f.push(one_hot_rows(&first, width));
        s_f2.push(one_hot_rows(&second, width));
    }
    let pool_index = if top == 0 {
        out_index
    } else {
        cfg.k + (top - 1) * cfg.c + out_index
    };
    let bundle = AttentionBundle {
        s_phi: one_hot_rows(&phi, cfg.k),
        s_psi: one_hot_rows(&psi, cfg.t),
        s_psi2: one_hot_rows(&psi2, cfg.t),
        s_f,
        s_f2,
        s_o: one_hot_rows(&[pool_index], cfg.pool_size()),
    };
    bundle.check_shapes(cfg)?;
    Ok(bundle)
}

/// `(first path, second path)` as operator lists, checking that sources
/// are the positional ones the rule space uses.
fn statement_paths(leaf: &StatementAst, unary: bool) -> Result<(Option<Vec<OpRef>>, Vec<OpRef>)> {
    let check = |p: &PathAst, want: PathSource| {
        if p.source != want {
            Err(not_encodable(format!(
                "path source {:?} where {:?} is required",
                p.source, want
            )))
        } else {
            Ok(p.ops.clone())
        }
    };
    match (unary, leaf.args.as_slice()) {
        (true, [second]) => Ok((None, check(second, PathSource::XPrime)?)),
        (false, [first, second]) => Ok((Some(check(first, PathSource::X)?), check(second, PathSource::XPrime)?)),
        _ => Err(not_encodable("statement arity does not match its predicate")),
    }
}

/// Index of `f` within its level: the statement id for leaves, a slot for
/// conjunctions. Records each conjunction's two picks.
fn assign(
    f: &Formula,
    vocab: &PredicateTable,
    cfg: &RuleSpaceConfig,
    slots: &mut Vec<Vec<Formula>>,
    picks: &mut Vec<Vec<(usize, usize)>>,
) -> Result<usize> {
    match f {
        Formula::Leaf(s) => s
            .predicate
            .to_id(vocab)
            .ok_or_else(|| not_encodable(format!("operator {} not in the vocabulary", s.predicate))),
        Formula::Not(_) => Err(not_encodable("a negation cannot be selected directly")),
        Formula::And(a, b) => {
            let level = level_of(f)?;
            if let Some(i) = slots[level].iter().position(|g| g == f) {
                return Ok(i);
            }
            let prev = cfg.level_input(level);
            let mut pick = |x: &Formula| -> Result<usize> {
                match x {
                    Formula::Not(inner) => Ok(prev + assign(inner, vocab, cfg, slots, picks)?),
                    other => assign(other, vocab, cfg, slots, picks),
                }
            };
            let pa = pick(a)?;
            let pb = pick(b)?;
            if slots[level].len() == cfg.c {
                return Err(not_encodable(format!(
                    "more than C = {} formulas at level {level}",
                    cfg.c
                )));
            }
            slots[level].push(f.clone());
            picks[level].push((pa, pb));
            Ok(slots[level].len() - 1)
        }
    }
}
