//! Relational knowledge bases.
//!
//! Facts are `⟨subject, predicate, object⟩` triples over a dense entity id
//! space. Unary facts are stored with `object == subject`, i.e. on the
//! diagonal of their predicate's adjacency matrix.

mod load;
mod matrix;
mod sample;
mod synth;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub use load::{load_facts, load_split, meta_text, parse_facts, parse_meta, write_facts, write_meta};
pub use matrix::{build_matrices, AdjacencyStore, AugmentOptions, SparseBoolMatrix};
pub use sample::{classification_queries, positive_queries, sample_negative_queries};
pub use synth::{
    even_successor_count, gen_even_successor, gen_planted_composition, gen_random_kb, toy3, PlantedOptions,
};

/// Reserved name of the built-in identity operator.
pub const IDENTITY_NAME: &str = "Identity";
/// Suffix marking an inverse operator, e.g. `Succ⁻¹`.
pub const INVERSE_SUFFIX: &str = "⁻¹";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KbError {
    #[error("{file}:{line}: unknown predicate `{name}`")]
    UnknownPredicate { file: String, line: usize, name: String },
    #[error("{file}:{line}: predicate `{name}` has arity {declared} but the row has {fields} fields")]
    ArityMismatch {
        file: String,
        line: usize,
        name: String,
        declared: usize,
        fields: usize,
    },
    #[error("{file}:{line}: unknown entity `{name}`")]
    UnknownEntity { file: String, line: usize, name: String },
    #[error("{0}: knowledge base contains no facts")]
    EmptyKb(String),
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
    #[error("predicate `{0}` declared twice")]
    DuplicatePredicate(String),
    #[error("invalid predicate name `{0}`")]
    InvalidName(String),
    #[error("target matrix has no zero entries")]
    NoNegatives,
    #[error("requested {requested} negatives but only {available} zero entries exist")]
    NotEnoughNegatives { requested: usize, available: usize },
    #[error("benchmark size must be at least 2, got {0}")]
    InvalidSize(usize),
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("splits overlap: fact {0} appears in more than one split")]
    OverlappingSplits(String),
    #[error("predicate id {0} is not in the vocabulary")]
    UnknownPredicateId(usize),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, KbError>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl EntityTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, assigning the next dense id if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arity {
    Unary,
    Binary,
}

impl Arity {
    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            1 => Some(Arity::Unary),
            2 => Some(Arity::Binary),
            _ => None,
        }
    }

    pub fn count(self) -> usize {
        match self {
            Arity::Unary => 1,
            Arity::Binary => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredicateKind {
    /// Declared in the metadata file.
    Base,
    /// Transposed companion of a binary base predicate.
    Inverse { base: usize },
    /// The built-in identity relation.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    pub name: String,
    pub arity: Arity,
    pub kind: PredicateKind,
}

/// Predicates with dense ids. Base predicates come first in declaration
/// order; an augmented table (see [`AdjacencyStore`]) appends inverses and
/// the identity after them, so base ids are stable under augmentation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredicateTable {
    entries: Vec<Predicate>,
    index: HashMap<String, usize>,
}

pub(crate) fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.contains(|c: char| c.is_whitespace() || "(),¬∧←=[]²φ'".contains(c) || c == '\t')
        && !name.ends_with(INVERSE_SUFFIX)
}

impl PredicateTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a base predicate.
    pub fn declare(&mut self, name: &str, arity: Arity) -> Result<usize> {
        if !valid_name(name) || name == IDENTITY_NAME {
            return Err(KbError::InvalidName(name.to_string()));
        }
        self.push(Predicate {
            name: name.to_string(),
            arity,
            kind: PredicateKind::Base,
        })
    }

    pub(crate) fn push(&mut self, p: Predicate) -> Result<usize> {
        if self.index.contains_key(&p.name) {
            return Err(KbError::DuplicatePredicate(p.name));
        }
        let id = self.entries.len();
        self.index.insert(p.name.clone(), id);
        self.entries.push(p);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: usize) -> &Predicate {
        &self.entries[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.entries[id].name
    }

    pub fn arity(&self, id: usize) -> Arity {
        self.entries[id].arity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Predicate)> {
        self.entries.iter().enumerate()
    }

    pub fn is_unary(&self, id: usize) -> bool {
        self.entries[id].arity == Arity::Unary
    }

    pub fn unary_ids(&self) -> Vec<usize> {
        self.iter()
            .filter(|(_, p)| p.arity == Arity::Unary)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn binary_ids(&self) -> Vec<usize> {
        self.iter()
            .filter(|(_, p)| p.arity == Arity::Binary)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_inverse(&self, id: usize) -> bool {
        matches!(self.entries[id].kind, PredicateKind::Inverse { .. })
    }

    pub fn is_identity(&self, id: usize) -> bool {
        self.entries[id].kind == PredicateKind::Identity
    }

    /// Id of the inverse companion of `id`, in either direction.
    pub fn inverse_of(&self, id: usize) -> Option<usize> {
        match self.entries[id].kind {
            PredicateKind::Inverse { base } => Some(base),
            PredicateKind::Base => self.iter().find_map(|(j, p)| match p.kind {
                PredicateKind::Inverse { base } if base == id => Some(j),
                _ => None,
            }),
            PredicateKind::Identity => None,
        }
    }

    pub fn identity(&self) -> Option<usize> {
        self.iter()
            .find(|(_, p)| p.kind == PredicateKind::Identity)
            .map(|(i, _)| i)
    }

    /// Number of base (declared) predicates.
    pub fn base_count(&self) -> usize {
        self.entries.iter().filter(|p| p.kind == PredicateKind::Base).count()
    }
}

/// A fact. For unary predicates `object == subject`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fact {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

impl Fact {
    pub fn new(subject: usize, predicate: usize, object: usize) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }

    pub fn unary(entity: usize, predicate: usize) -> Self {
        Self::new(entity, predicate, entity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub entities: EntityTable,
    pub predicates: PredicateTable,
    /// Deduplicated facts in first-appearance order.
    pub facts: Vec<Fact>,
}

impl KnowledgeBase {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn facts_of(&self, predicate: usize) -> impl Iterator<Item = &Fact> {
        self.facts.iter().filter(move |f| f.predicate == predicate)
    }

    pub fn display_fact(&self, f: &Fact) -> String {
        let p = self.predicates.get(f.predicate);
        match p.arity {
            Arity::Unary => format!("{}({})", p.name, self.entities.name(f.subject)),
            Arity::Binary => format!(
                "{}({},{})",
                p.name,
                self.entities.name(f.subject),
                self.entities.name(f.object)
            ),
        }
    }
}

/// Train/valid/test fact lists over the same tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<Fact>,
    pub valid: Vec<Fact>,
    pub test: Vec<Fact>,
}

impl SplitDataset {
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for f in self.train.iter().chain(&self.valid).chain(&self.test) {
            if !seen.insert(*f) {
                return Err(KbError::OverlappingSplits(format!(
                    "({}, {}, {})",
                    f.subject, f.predicate, f.object
                )));
            }
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = &Fact> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

/// A knowledge base whose fact list is the training split, plus the splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kb: KnowledgeBase,
    pub splits: SplitDataset,
}

impl Dataset {
    /// Loads `meta.tsv`, `train.tsv` and (if present) `valid.tsv`/`test.tsv`
    /// from a directory. Entity ids come from the training file.
    pub fn load_dir(dir: &std::path::Path) -> Result<Self> {
        let kb = load_facts(&dir.join("train.tsv"), &dir.join("meta.tsv"))?;
        let mut splits = SplitDataset {
            train: kb.facts.clone(),
            ..Default::default()
        };
        let valid = dir.join("valid.tsv");
        if valid.exists() {
            splits.valid = load_split(&valid, &kb)?;
        }
        let test = dir.join("test.tsv");
        if test.exists() {
            splits.test = load_split(&test, &kb)?;
        }
        splits.check_disjoint()?;
        Ok(Dataset { kb, splits })
    }

    pub fn write_dir(&self, dir: &std::path::Path) -> Result<()> {
        let io = |e: std::io::Error| KbError::Io {
            path: dir.display().to_string(),
            msg: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        write_meta(&dir.join("meta.tsv"), &self.kb.predicates)?;
        let all: Vec<Fact> = self.splits.all().copied().collect();
        write_facts(&dir.join("facts.tsv"), &self.kb, &all)?;
        write_facts(&dir.join("train.tsv"), &self.kb, &self.splits.train)?;
        write_facts(&dir.join("valid.tsv"), &self.kb, &self.splits.valid)?;
        write_facts(&dir.join("test.tsv"), &self.kb, &self.splits.test)?;
        Ok(())
    }
}

/// One query row `⟨subject, target, object⟩` with its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Query {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
    pub label: bool,
}

impl Query {
    pub fn fact(&self) -> Fact {
        Fact::new(self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryBatch {
    pub rows: Vec<Query>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}; y={})",
            self.subject, self.predicate, self.object, self.label as u8
        )
    }
}

/// One-hot encoding of entity `id` in `dim` dimensions.
pub fn one_hot(id: usize, dim: usize) -> Result<Vec<f64>> {
    if id >= dim {
        return Err(KbError::IndexOutOfRange { index: id, dim });
    }
    let mut v = vec![0.0; dim];
    v[id] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(1, 3).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(one_hot(0, 1).unwrap(), vec![1.0]);
        assert_eq!(one_hot(3, 3), Err(KbError::IndexOutOfRange { index: 3, dim: 3 }));
    }

    #[test]
    fn entity_ids_are_dense_and_bijective() {
        let mut t = EntityTable::new();
        assert_eq!(t.intern("a"), 0);
        assert_eq!(t.intern("b"), 1);
        assert_eq!(t.intern("a"), 0);
        assert_eq!(t.len(), 2);
        for (i, n) in t.names().iter().enumerate() {
            assert_eq!(t.id(n), Some(i));
        }
    }

    #[test]
    fn predicate_names_validated() {
        let mut p = PredicateTable::new();
        assert!(p.declare("Succ", Arity::Binary).is_ok());
        assert!(matches!(
            p.declare("Succ", Arity::Unary),
            Err(KbError::DuplicatePredicate(_))
        ));
        assert!(matches!(
            p.declare("Identity", Arity::Binary),
            Err(KbError::InvalidName(_))
        ));
        assert!(matches!(p.declare("a b", Arity::Binary), Err(KbError::InvalidName(_))));
        assert!(matches!(p.declare("R⁻¹", Arity::Binary), Err(KbError::InvalidName(_))));
    }

    #[test]
    fn overlapping_splits_rejected() {
        let f = Fact::new(0, 0, 1);
        let s = SplitDataset {
            train: vec![f],
            valid: vec![],
            test: vec![f],
        };
        assert!(s.check_disjoint().is_err());
    }
}
