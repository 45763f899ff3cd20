use rand::seq::index;

use super::{AdjacencyStore, AugmentOptions, Dataset, Fact, KbError, Query, QueryBatch, Result};
use crate::seed;

/// Label-1 queries for the facts of `target`.
pub fn positive_queries<'a>(facts: impl IntoIterator<Item = &'a Fact>, target: usize) -> QueryBatch {
    QueryBatch {
        rows: facts
            .into_iter()
            .filter(|f| f.predicate == target)
            .map(|f| Query {
                subject: f.subject,
                predicate: f.predicate,
                object: f.object,
                label: true,
            })
            .collect(),
    }
}

/// Samples `n` label-0 queries uniformly without replacement from the zero
/// entries of `target`'s matrix (its diagonal for unary targets).
pub fn sample_negative_queries(store: &AdjacencyStore, target: usize, n: usize, seed: u64) -> Result<QueryBatch> {
    if target >= store.len() {
        return Err(KbError::UnknownPredicateId(target));
    }
    let m = store.matrix(target);
    let dim = store.num_entities();
    let unary = store.is_unary(target);
    let zeros = if unary { dim - m.nnz() } else { dim * dim - m.nnz() };
    if zeros == 0 {
        return Err(KbError::NoNegatives);
    }
    if n > zeros {
        return Err(KbError::NotEnoughNegatives {
            requested: n,
            available: zeros,
        });
    }
    let mut rng = seed::rng(seed, seed::stream::NEGATIVES, target as u64);
    let mut ranks = index::sample(&mut rng, zeros, n).into_vec();
    ranks.sort_unstable();

    let mut rows = Vec::with_capacity(n);
    if unary {
        let free: Vec<usize> = (0..dim).filter(|&i| !m.contains(i, i)).collect();
        rows.extend(ranks.iter().map(|&r| (free[r], free[r])));
    } else {
        // Zero cells are enumerated row-major; ranks are sorted so one sweep
        // over the rows suffices.
        let mut next = 0usize;
        let mut before = 0usize;
        for i in 0..dim {
            if next == ranks.len() {
                break;
            }
            let row_zeros = dim - m.row_len(i);
            if ranks[next] < before + row_zeros {
                let mut seen = before;
                for j in 0..dim {
                    if next == ranks.len() {
                        break;
                    }
                    if m.contains(i, j) {
                        continue;
                    }
                    if ranks[next] == seen {
                        rows.push((i, j));
                        next += 1;
                    }
                    seen += 1;
                }
            }
            before += row_zeros;
        }
    }
    // Restore the random draw order so batches are not sorted by entity.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    Ok(QueryBatch {
        rows: order
            .into_iter()
            .map(|i| {
                let (s, o) = rows[i];
                Query {
                    subject: s,
                    predicate: target,
                    object: o,
                    label: false,
                }
            })
            .collect(),
    })
}

/// Labelled queries for classifying the `facts` of the given heads: each
/// fact as a positive, and as negatives every entity never known (in any
/// split) to hold a unary head, or as many unknown pairs as positives,
/// sampled with `seed`, for a binary head. Heads without facts are skipped.
pub fn classification_queries(dataset: &Dataset, facts: &[Fact], heads: &[usize], seed: u64) -> Result<Vec<Query>> {
    let all: Vec<Fact> = dataset.splits.all().copied().collect();
    let known = AdjacencyStore::from_facts(
        &dataset.kb.predicates,
        dataset.kb.num_entities(),
        &all,
        AugmentOptions {
            add_inverses: false,
            add_identity: false,
        },
    );
    let mut out = Vec::new();
    for &h in heads {
        if h >= known.len() {
            return Err(KbError::UnknownPredicateId(h));
        }
        let pos = positive_queries(facts, h).rows;
        if pos.is_empty() {
            continue;
        }
        let n = known.num_entities();
        let m = known.matrix(h);
        if known.is_unary(h) {
            out.extend_from_slice(&pos);
            out.extend((0..n).filter(|&e| !m.contains(e, e)).map(|e| Query {
                subject: e,
                predicate: h,
                object: e,
                label: false,
            }));
        } else {
            let want = pos.len().min(n * n - m.nnz());
            out.extend_from_slice(&pos);
            out.extend(sample_negative_queries(&known, h, want, seed)?.rows);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{build_matrices, toy3};

    #[test]
    fn toy3_negative_is_a_zero_entry() {
        let kb = toy3();
        let store = build_matrices(&kb, true, true);
        let succ = kb.predicates.id("Succ").unwrap();
        // Oracle: the 7 zero cells of M_Succ.
        let zeros: Vec<(usize, usize)> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| !((i, j) == (0, 1) || (i, j) == (1, 2)))
            .collect();
        assert_eq!(zeros.len(), 7);
        let b = sample_negative_queries(&store, succ, 1, 42).unwrap();
        assert_eq!(b.len(), 1);
        let q = b.rows[0];
        assert!(!q.label);
        assert!(zeros.contains(&(q.subject, q.object)));
        let all = sample_negative_queries(&store, succ, 7, 3).unwrap();
        let mut got: Vec<_> = all.rows.iter().map(|q| (q.subject, q.object)).collect();
        got.sort();
        assert_eq!(got, zeros);
    }

    #[test]
    fn zero_count_is_empty() {
        let kb = toy3();
        let store = build_matrices(&kb, true, true);
        assert!(sample_negative_queries(&store, 0, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn full_matrix_has_no_negatives() {
        let kb = toy3();
        let store = build_matrices(&kb, true, true);
        let id = store.vocab().identity().unwrap();
        let mut kb2 = kb.clone();
        let full = kb2.predicates.declare("All", crate::kb::Arity::Binary).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                kb2.facts.push(Fact::new(i, full, j));
            }
        }
        let store2 = build_matrices(&kb2, false, false);
        assert_eq!(sample_negative_queries(&store2, full, 1, 0), Err(KbError::NoNegatives));
        assert!(matches!(
            sample_negative_queries(&store, id, 7, 0),
            Err(KbError::NotEnoughNegatives {
                requested: 7,
                available: 6
            })
        ));
    }

    #[test]
    fn unary_negatives_stay_on_diagonal() {
        let kb = toy3();
        let store = build_matrices(&kb, true, true);
        let even = kb.predicates.id("Even").unwrap();
        let b = sample_negative_queries(&store, even, 1, 9).unwrap();
        assert_eq!(b.rows[0].subject, 1);
        assert_eq!(b.rows[0].object, 1);
    }

    #[test]
    fn classification_negatives_are_unknown_in_every_split() {
        let (kb, splits) = crate::kb::gen_even_successor(10, 0.2).unwrap();
        let ds = Dataset::from_split(kb, splits).unwrap();
        let even = ds.kb.predicates.id("Even").unwrap();
        let succ = ds.kb.predicates.id("Succ").unwrap();
        let qs = classification_queries(&ds, &ds.splits.test, &[even, succ], 0).unwrap();
        let pos: Vec<usize> = qs.iter().filter(|q| q.label).map(|q| q.subject).collect();
        let neg: Vec<usize> = qs.iter().filter(|q| !q.label).map(|q| q.subject).collect();
        assert_eq!(pos, vec![4]);
        assert_eq!(neg, vec![1, 3, 5, 7, 9]);
        // Succ has no test facts, so it contributes nothing.
        assert!(qs.iter().all(|q| q.predicate == even));

        let train_succ = classification_queries(&ds, &ds.splits.train, &[succ], 3).unwrap();
        let negs: Vec<_> = train_succ.iter().filter(|q| !q.label).collect();
        assert_eq!(negs.len(), 9);
        assert!(negs.iter().all(|q| q.object != q.subject + 1));
        assert!(classification_queries(&ds, &ds.splits.test, &[9], 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let kb = toy3();
        let store = build_matrices(&kb, true, true);
        let a = sample_negative_queries(&store, 0, 4, 5).unwrap();
        let b = sample_negative_queries(&store, 0, 4, 5).unwrap();
        assert_eq!(a, b);
    }
}
