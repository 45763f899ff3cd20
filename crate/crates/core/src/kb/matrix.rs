use std::sync::Arc;

use super::{Arity, Fact, KnowledgeBase, Predicate, PredicateKind, PredicateTable, IDENTITY_NAME, INVERSE_SUFFIX};
use crate::diffmath::Scalar;

/// Square boolean matrix stored as sorted coordinates plus a CSR index.
///
/// `M[i, j] = 1` iff the fact `⟨x_i, P, x_j⟩` holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseBoolMatrix {
    n: usize,
    coords: Vec<(u32, u32)>,
    row_ptr: Vec<usize>,
}

impl SparseBoolMatrix {
    pub fn from_coords(n: usize, mut coords: Vec<(u32, u32)>) -> Self {
        coords.sort_unstable();
        coords.dedup();
        debug_assert!(coords.iter().all(|&(i, j)| (i as usize) < n && (j as usize) < n));
        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _) in &coords {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, coords, row_ptr }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_coords(n, Vec::new())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_coords(n, (0..n as u32).map(|i| (i, i)).collect())
    }

    pub fn transpose(&self) -> Self {
        Self::from_coords(self.n, self.coords.iter().map(|&(i, j)| (j, i)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[(u32, u32)] {
        &self.coords
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search_by_key(&(j as u32), |&(_, c)| c).is_ok()
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    fn row(&self, i: usize) -> &[(u32, u32)] {
        &self.coords[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn is_diagonal(&self) -> bool {
        self.coords.iter().all(|&(i, j)| i == j)
    }

    /// `M 1`: number of ones in each row.
    pub fn row_sums<T: Scalar>(&self) -> Vec<T> {
        (0..self.n).map(|i| T::from_usize(self.row(i).len())).collect()
    }

    /// Dense matrix-vector product. With `transpose`, computes `Mᵀ v`,
    /// which maps a subject set to the set of its objects.
    pub fn apply<T: Scalar>(&self, v: &[T], transpose: bool) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        self.apply_batch_into(v, &mut out, 1, transpose);
        out
    }

    /// Batched product over an `n × b` row-major block, accumulating into
    /// `out`. Column `q` of the block is one vector.
    pub fn apply_batch_into<T: Scalar>(&self, u: &[T], out: &mut [T], b: usize, transpose: bool) {
        debug_assert_eq!(u.len(), self.n * b);
        debug_assert_eq!(out.len(), self.n * b);
        for &(i, j) in &self.coords {
            let (src, dst) = if transpose { (i, j) } else { (j, i) };
            let s = src as usize * b;
            let d = dst as usize * b;
            if b == 1 {
                out[d] += u[s];
            } else {
                let (src_row, dst_row) = (&u[s..s + b], &mut out[d..d + b]);
                for (o, &x) in dst_row.iter_mut().zip(src_row) {
                    *o += x;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentOptions {
    pub add_inverses: bool,
    pub add_identity: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            add_inverses: true,
            add_identity: true,
        }
    }
}

/// Per-predicate adjacency matrices over the augmented operator
/// vocabulary. Immutable after construction; matrices are shared via `Arc`
/// so computation graphs can hold them.
#[derive(Debug, Clone)]
pub struct AdjacencyStore {
    vocab: PredicateTable,
    matrices: Vec<Arc<SparseBoolMatrix>>,
    inverse: Vec<Option<usize>>,
    n: usize,
}

/// Builds one matrix per predicate from the knowledge base's facts, then
/// appends inverse companions (`Pₖ⁻¹`, transposed) and the identity.
pub fn build_matrices(kb: &KnowledgeBase, add_inverses: bool, add_identity: bool) -> AdjacencyStore {
    AdjacencyStore::from_facts(
        &kb.predicates,
        kb.num_entities(),
        &kb.facts,
        AugmentOptions {
            add_inverses,
            add_identity,
        },
    )
}

impl AdjacencyStore {
    pub fn from_facts(predicates: &PredicateTable, n: usize, facts: &[Fact], opts: AugmentOptions) -> Self {
        let base = predicates.len();
        let mut coords: Vec<Vec<(u32, u32)>> = vec![Vec::new(); base];
        for f in facts {
            coords[f.predicate].push((f.subject as u32, f.object as u32));
        }
        let mut vocab = predicates.clone();
        let mut matrices: Vec<Arc<SparseBoolMatrix>> = coords
            .into_iter()
            .map(|c| Arc::new(SparseBoolMatrix::from_coords(n, c)))
            .collect();
        if opts.add_inverses {
            for id in 0..base {
                if predicates.arity(id) == Arity::Binary {
                    let name = format!("{}{}", predicates.name(id), INVERSE_SUFFIX);
                    vocab
                        .push(Predicate {
                            name,
                            arity: Arity::Binary,
                            kind: PredicateKind::Inverse { base: id },
                        })
                        .expect("inverse names cannot collide with validated base names");
                    matrices.push(Arc::new(matrices[id].transpose()));
                }
            }
        }
        if opts.add_identity {
            vocab
                .push(Predicate {
                    name: IDENTITY_NAME.to_string(),
                    arity: Arity::Binary,
                    kind: PredicateKind::Identity,
                })
                .expect("identity name is reserved");
            matrices.push(Arc::new(SparseBoolMatrix::identity(n)));
        }
        let inverse = (0..vocab.len()).map(|k| vocab.inverse_of(k)).collect();
        Self {
            vocab,
            matrices,
            inverse,
            n,
        }
    }

    pub fn vocab(&self) -> &PredicateTable {
        &self.vocab
    }

    /// Operator vocabulary size K.
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.n
    }

    pub fn matrix(&self, k: usize) -> &SparseBoolMatrix {
        &self.matrices[k]
    }

    pub fn matrix_arc(&self, k: usize) -> Arc<SparseBoolMatrix> {
        Arc::clone(&self.matrices[k])
    }

    pub fn inverse_of(&self, k: usize) -> Option<usize> {
        self.inverse[k]
    }

    pub fn is_unary(&self, k: usize) -> bool {
        self.vocab.is_unary(k)
    }

    pub fn contains(&self, f: &Fact) -> bool {
        self.matrices[f.predicate].contains(f.subject, f.object)
    }

    /// Total nonzeros over all matrices.
    pub fn nnz(&self) -> usize {
        self.matrices.iter().map(|m| m.nnz()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::toy3;

    #[test]
    fn toy3_matrices() {
        let kb = toy3();
        let store = build_matrices(&kb, true, true);
        let succ = kb.predicates.id("Succ").unwrap();
        let even = kb.predicates.id("Even").unwrap();
        assert_eq!(store.matrix(succ).coords(), &[(0, 1), (1, 2)]);
        assert_eq!(store.matrix(even).coords(), &[(0, 0), (2, 2)]);
        assert!(store.matrix(even).is_diagonal());
        let inv = store.inverse_of(succ).unwrap();
        assert_eq!(store.matrix(inv).coords(), &[(1, 0), (2, 1)]);
        let id = store.vocab().identity().unwrap();
        assert_eq!(*store.matrix(id), SparseBoolMatrix::identity(3));
        assert_eq!(store.inverse_of(inv), Some(succ));
        assert_eq!(store.vocab().name(inv), "Succ⁻¹");
    }

    #[test]
    fn predicate_without_facts_is_zero_matrix() {
        let mut kb = toy3();
        let p = kb.predicates.declare("Empty", Arity::Binary).unwrap();
        let store = build_matrices(&kb, false, false);
        assert_eq!(store.matrix(p).nnz(), 0);
        assert_eq!(store.len(), kb.predicates.len());
    }

    #[test]
    fn transposed_apply_follows_edges() {
        let kb = toy3();
        let store = build_matrices(&kb, true, true);
        let succ = kb.predicates.id("Succ").unwrap();
        let out = store.matrix(succ).apply(&[1.0f64, 0.0, 0.0], true);
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
        let back = store.matrix(succ).apply(&[0.0f64, 1.0, 0.0], false);
        assert_eq!(back, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn batched_apply_matches_columns() {
        let m = SparseBoolMatrix::from_coords(3, vec![(0, 1), (1, 2), (2, 2), (0, 2)]);
        let block = [1.0f64, 0.5, 2.0, 0.0, 0.0, 3.0];
        let mut out = vec![0.0; 6];
        m.apply_batch_into(&block, &mut out, 2, true);
        let c0 = m.apply(&[1.0, 2.0, 0.0], true);
        let c1 = m.apply(&[0.5, 0.0, 3.0], true);
        for i in 0..3 {
            assert_eq!(out[i * 2], c0[i]);
            assert_eq!(out[i * 2 + 1], c1[i]);
        }
    }
}
