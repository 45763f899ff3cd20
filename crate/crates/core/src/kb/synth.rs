use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Arity, Dataset, EntityTable, Fact, KbError, KnowledgeBase, PredicateTable, Result, SplitDataset};
use crate::seed;

/// The three-entity fixture used throughout the tests:
/// `Succ(e0,e1)`, `Succ(e1,e2)`, `Even(e0)`, `Even(e2)`.
pub fn toy3() -> KnowledgeBase {
    let mut predicates = PredicateTable::new();
    let succ = predicates.declare("Succ", Arity::Binary).unwrap();
    let even = predicates.declare("Even", Arity::Unary).unwrap();
    let mut entities = EntityTable::new();
    for name in ["e0", "e1", "e2"] {
        entities.intern(name);
    }
    KnowledgeBase {
        entities,
        predicates,
        facts: vec![
            Fact::new(0, succ, 1),
            Fact::new(1, succ, 2),
            Fact::unary(0, even),
            Fact::unary(2, even),
        ],
    }
}

/// Fact count of the Even-and-Successor benchmark on `n` integers:
/// `Zero(0)`, `Even(2i)` for `2i < n`, `Succ(i, i+1)` for `i < n-1`.
pub fn even_successor_count(n: usize) -> usize {
    1 + n.div_ceil(2) + (n - 1)
}

/// Generates the Even-and-Successor benchmark over the integers `0..n`.
///
/// The returned knowledge base holds every fact; the split holds out
/// `round(holdout_frac · #Even)` `Even` facts for testing. Held-out facts are
/// evenly spaced over the interior of the even numbers (never `Even(0)` or
/// the largest even number) so every held-out `Even(x)` keeps `Even(x-2)` and
/// `Even(x+2)` in the training split.
pub fn gen_even_successor(n: usize, holdout_frac: f64) -> Result<(KnowledgeBase, SplitDataset)> {
    if n < 2 {
        return Err(KbError::InvalidSize(n));
    }
    let mut predicates = PredicateTable::new();
    let even = predicates.declare("Even", Arity::Unary)?;
    let zero = predicates.declare("Zero", Arity::Unary)?;
    let succ = predicates.declare("Succ", Arity::Binary)?;
    let mut entities = EntityTable::new();
    for i in 0..n {
        entities.intern(&i.to_string());
    }
    let mut facts = vec![Fact::unary(0, zero)];
    let evens: Vec<Fact> = (0..n).step_by(2).map(|i| Fact::unary(i, even)).collect();
    facts.extend(&evens);
    facts.extend((0..n - 1).map(|i| Fact::new(i, succ, i + 1)));

    let m = evens.len();
    let interior = m.saturating_sub(2);
    let want = ((holdout_frac.clamp(0.0, 1.0) * m as f64).round() as usize).min(interior);
    let held: HashSet<usize> = (0..want)
        .map(|i| 1 + ((i as f64 + 0.5) * interior as f64 / want as f64).floor() as usize)
        .collect();
    let test: Vec<Fact> = evens
        .iter()
        .enumerate()
        .filter(|(i, _)| held.contains(i))
        .map(|(_, f)| *f)
        .collect();
    let train: Vec<Fact> = facts.iter().filter(|f| !test.contains(f)).copied().collect();
    Ok((
        KnowledgeBase {
            entities,
            predicates,
            facts,
        },
        SplitDataset {
            train,
            valid: Vec::new(),
            test,
        },
    ))
}

impl Dataset {
    /// Restricts `kb`'s facts to the training split.
    pub fn from_split(mut kb: KnowledgeBase, splits: SplitDataset) -> Result<Self> {
        splits.check_disjoint()?;
        kb.facts = splits.train.clone();
        Ok(Dataset { kb, splits })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedOptions {
    pub entities: usize,
    /// Extra random `R3` edges as a fraction of the planted ones.
    pub noise: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for PlantedOptions {
    fn default() -> Self {
        Self {
            entities: 500,
            noise: 0.05,
            valid_frac: 0.1,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

/// A four-relation knowledge base with a planted composition
/// `R3(x, z) ⇐ R1(x, y) ∧ R2(y, z)`, plus noise edges on `R3` and an
/// unrelated distractor `R4`. `R1` and `R2` give every entity exactly one
/// successor. Only `R3` facts are split into valid/test.
pub fn gen_planted_composition(opts: &PlantedOptions) -> Result<Dataset> {
    let n = opts.entities;
    if n < 2 {
        return Err(KbError::InvalidSize(n));
    }
    let mut rng = seed::rng(opts.seed, seed::stream::SYNTH, 0);
    let mut predicates = PredicateTable::new();
    let r1 = predicates.declare("R1", Arity::Binary)?;
    let r2 = predicates.declare("R2", Arity::Binary)?;
    let r3 = predicates.declare("R3", Arity::Binary)?;
    let r4 = predicates.declare("R4", Arity::Binary)?;
    let mut entities = EntityTable::new();
    for i in 0..n {
        entities.intern(&format!("n{i}"));
    }
    let step1: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let step2: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut background = Vec::new();
    for x in 0..n {
        background.push(Fact::new(x, r1, step1[x]));
        background.push(Fact::new(x, r2, step2[x]));
    }
    let mut distractor = HashSet::new();
    while distractor.len() < n {
        distractor.insert((rng.gen_range(0..n), rng.gen_range(0..n)));
    }
    let mut distractor: Vec<_> = distractor.into_iter().collect();
    distractor.sort_unstable();
    background.extend(distractor.into_iter().map(|(a, b)| Fact::new(a, r4, b)));

    let mut target: HashSet<(usize, usize)> = (0..n).map(|x| (x, step2[step1[x]])).collect();
    let planted = target.len();
    let noise = (opts.noise * planted as f64).round() as usize;
    let mut added = 0;
    while added < noise {
        if target.insert((rng.gen_range(0..n), rng.gen_range(0..n))) {
            added += 1;
        }
    }
    let mut target: Vec<Fact> = target.into_iter().map(|(a, b)| Fact::new(a, r3, b)).collect();
    target.sort_unstable();
    target.shuffle(&mut rng);
    let n_test = (opts.test_frac * target.len() as f64).round() as usize;
    let n_valid = (opts.valid_frac * target.len() as f64).round() as usize;
    let test = target[..n_test].to_vec();
    let valid = target[n_test..n_test + n_valid].to_vec();
    let mut train = background;
    train.extend_from_slice(&target[n_test + n_valid..]);
    let splits = SplitDataset { train, valid, test };
    let mut facts: Vec<Fact> = splits.all().copied().collect();
    facts.dedup();
    Dataset::from_split(
        KnowledgeBase {
            entities,
            predicates,
            facts,
        },
        splits,
    )
}

/// A random knowledge base with `unary` unary predicates (`U0`, `U1`, …)
/// and `binary` binary ones (`B0`, …). Each unary fact holds with
/// probability `density`, and each binary pair with probability
/// `density / n`, so the expected out-degree is about `density`.
pub fn gen_random_kb(n: usize, unary: usize, binary: usize, density: f64, seed: u64) -> Result<KnowledgeBase> {
    if n == 0 {
        return Err(KbError::InvalidSize(n));
    }
    let mut rng = seed::rng(seed, seed::stream::SYNTH, 1);
    let mut predicates = PredicateTable::new();
    let us: Vec<usize> = (0..unary)
        .map(|i| predicates.declare(&format!("U{i}"), Arity::Unary))
        .collect::<Result<_>>()?;
    let bs: Vec<usize> = (0..binary)
        .map(|i| predicates.declare(&format!("B{i}"), Arity::Binary))
        .collect::<Result<_>>()?;
    let mut entities = EntityTable::new();
    for i in 0..n {
        entities.intern(&format!("e{i}"));
    }
    let mut facts = Vec::new();
    for &u in &us {
        facts.extend(
            (0..n)
                .filter(|_| rng.gen_bool(density.clamp(0.0, 1.0)))
                .map(|e| Fact::unary(e, u)),
        );
    }
    let pair = (density / n as f64).clamp(0.0, 1.0);
    for &b in &bs {
        for x in 0..n {
            facts.extend((0..n).filter(|_| rng.gen_bool(pair)).map(|y| Fact::new(x, b, y)));
        }
    }
    Ok(KnowledgeBase {
        entities,
        predicates,
        facts,
    })
}
