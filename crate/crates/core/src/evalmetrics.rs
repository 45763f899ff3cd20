//! Filtered ranking and classification metrics.
//!
//! Ranks are fractional: a true answer tied with `m` other unfiltered
//! candidates receives the mean of the ranks the tie spans, so a model that
//! scores everything equally earns the middle rank, not the best one.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::kb::{Fact, Query};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("entity id {index} out of range for {dim} candidates")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("the true answer {0} is listed among the filtered known truths")]
    TrueFiltered(usize),
    #[error("metric of an empty input")]
    EmptyInput,
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Ranks of a set of test queries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankingResult {
    pub ranks: Vec<f64>,
    /// Candidates each query competed against (after filtering, including
    /// the true answer).
    pub candidates: Vec<usize>,
}

impl RankingResult {
    pub fn push(&mut self, rank: f64, candidates: usize) {
        self.ranks.push(rank);
        self.candidates.push(candidates);
    }

    pub fn mrr(&self) -> Result<f64> {
        mrr(&self.ranks)
    }

    pub fn hits_at(&self, k: usize) -> Result<f64> {
        hits_at_k(&self.ranks, k)
    }
}

/// Rank of `true_object` among candidates not in `known_true`: one plus the
/// number of strictly better candidates plus half the number of ties.
/// Returns `(rank, candidate count)`.
pub fn filtered_rank<T: PartialOrd + Copy>(
    scores: &[T],
    true_object: usize,
    known_true: &HashSet<usize>,
) -> Result<(f64, usize)> {
    let dim = scores.len();
    if true_object >= dim {
        return Err(MetricsError::IndexOutOfRange {
            index: true_object,
            dim,
        });
    }
    if known_true.contains(&true_object) {
        return Err(MetricsError::TrueFiltered(true_object));
    }
    if let Some(&bad) = known_true.iter().find(|&&i| i >= dim) {
        return Err(MetricsError::IndexOutOfRange { index: bad, dim });
    }
    let target = scores[true_object];
    let (mut greater, mut ties, mut count) = (0usize, 0usize, 1usize);
    for (i, &s) in scores.iter().enumerate() {
        if i == true_object || known_true.contains(&i) {
            continue;
        }
        count += 1;
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    Ok((1.0 + greater as f64 + ties as f64 / 2.0, count))
}

pub fn mrr(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64)
}

pub fn hits_at_k(ranks: &[f64], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / ranks.len() as f64)
}

pub fn accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let right = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(right as f64 / labels.len() as f64)
}

/// Known true facts indexed for filtering, in both directions.
#[derive(Debug, Clone, Default)]
pub struct KnownFacts {
    objects: HashMap<(usize, usize), HashSet<usize>>,
    subjects: HashMap<(usize, usize), HashSet<usize>>,
    /// Entities on the diagonal of each predicate (the holders of unary
    /// predicates).
    holders: HashMap<usize, HashSet<usize>>,
}

impl KnownFacts {
    pub fn new<'a>(facts: impl IntoIterator<Item = &'a Fact>) -> Self {
        let mut k = Self::default();
        for f in facts {
            k.objects.entry((f.predicate, f.subject)).or_default().insert(f.object);
            k.subjects.entry((f.predicate, f.object)).or_default().insert(f.subject);
            if f.subject == f.object {
                k.holders.entry(f.predicate).or_default().insert(f.subject);
            }
        }
        k
    }

    /// The entities stored under `key`, minus `keep`.
    fn others<K: std::hash::Hash + Eq>(map: &HashMap<K, HashSet<usize>>, key: K, keep: usize) -> HashSet<usize> {
        map.get(&key)
            .map(|s| s.iter().copied().filter(|&e| e != keep).collect())
            .unwrap_or_default()
    }
}

/// Which corrupted side a score vector ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    /// Scores of `(subject, predicate, e)` for every entity `e`.
    Tail { predicate: usize, subject: usize },
    /// Scores of `(e, predicate, object)` for every entity `e`.
    Head { predicate: usize, object: usize },
    /// Scores of the unary fact `predicate(e)` for every entity `e`.
    Unary { predicate: usize },
}

/// Filtered ranks of the positive queries. Binary queries contribute a
/// tail and a head rank; unary queries one rank over all entities.
/// Negative queries are skipped.
pub fn rank_queries<E: From<MetricsError>>(
    queries: &[Query],
    known: &KnownFacts,
    is_unary: impl Fn(usize) -> bool,
    mut scores: impl FnMut(Corruption) -> std::result::Result<Vec<f64>, E>,
) -> std::result::Result<RankingResult, E> {
    let mut out = RankingResult::default();
    for q in queries.iter().filter(|q| q.label) {
        if is_unary(q.predicate) {
            let s = scores(Corruption::Unary { predicate: q.predicate })?;
            let filter = KnownFacts::others(&known.holders, q.predicate, q.subject);
            let (r, c) = filtered_rank(&s, q.subject, &filter)?;
            out.push(r, c);
        } else {
            let s = scores(Corruption::Tail {
                predicate: q.predicate,
                subject: q.subject,
            })?;
            let filter = KnownFacts::others(&known.objects, (q.predicate, q.subject), q.object);
            let (r, c) = filtered_rank(&s, q.object, &filter)?;
            out.push(r, c);
            let s = scores(Corruption::Head {
                predicate: q.predicate,
                object: q.object,
            })?;
            let filter = KnownFacts::others(&known.subjects, (q.predicate, q.object), q.subject);
            let (r, c) = filtered_rank(&s, q.subject, &filter)?;
            out.push(r, c);
        }
    }
    Ok(out)
}
