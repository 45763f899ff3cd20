//! The relaxed hierarchical rule space.
//!
//! A rule for a target predicate is scored on a query `(x, x′)` in three
//! stages, all driven by an [`AttentionBundle`]:
//!
//! 1. **Operator paths.** Starting from the one-hot `v_x`, step `t` mixes
//!    the operators `Op_k(u) = M_kᵀ u` with weights `S_φ[t, ·]`; a path
//!    attention then mixes the step outputs `u⁽¹⁾ … u⁽ᵀ⁾`. Entries count
//!    paths, so they are nonnegative.
//! 2. **Statements.** Each vocabulary predicate `k` yields one statement
//!    `ψ_k = σ(z_k / τ)`, where `z_k = Op_k(A_k) · B_k` for binary `k` and
//!    `z_k = diag(M_k) · B_k` for unary `k`. `A_k` and `B_k` are the
//!    path-mixed vectors grown from `x` and `x′`.
//! 3. **Formulas.** Level `l` holds `C` soft conjunctions
//!    `(S_f[c]·aug)(S′_f[c]·aug)`. `aug = [f, 1 − f]` stacks the previous
//!    level with its negation. The score is `s_o` applied to the pool of
//!    all levels.
//!
//! Evaluation is column-batched over queries and never materializes a
//! dense `|X| × |X|` matrix.

mod bundle;
mod eval;
mod op;
mod rank;

use thiserror::Error;

pub use bundle::{harden, AttentionBundle, BundleGrads};
pub use eval::{
    eval_formula_levels, eval_statement, kappa_apply, score_queries, score_queries_with, QueryMasks, ScoreBatch,
};
pub use op::{rule_space_scores, RuleSpaceVars};
pub use rank::{all_pair_scores, diagonal_scores, head_scores, tail_scores};

use crate::diffmath::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleSpaceError {
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{what} row {row} is not a probability vector")]
    NotStochastic { what: String, row: usize },
    #[error("query batch is empty")]
    EmptyBatch,
    #[error("invalid rule-space configuration: {0}")]
    Config(String),
    #[error("predicate id {0} is not in the vocabulary")]
    UnknownPredicate(usize),
    #[error("entity id {index} out of range for {dim} entities")]
    EntityOutOfRange { index: usize, dim: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, RuleSpaceError>;

/// Shape of the relaxed rule space.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSpaceConfig {
    /// Operator vocabulary size, after inverse and identity augmentation.
    pub k: usize,
    /// Maximum path length.
    pub t: usize,
    /// Number of formula levels; `0` and `1` both mean statements only.
    pub l: usize,
    /// Formulas per level.
    pub c: usize,
    /// Embedding width of the generator.
    pub d: usize,
    /// Divisor applied to path-count inner products before the sigmoid.
    pub temperature: f64,
}

impl RuleSpaceConfig {
    pub fn new(k: usize, t: usize, l: usize, c: usize, d: usize) -> Self {
        Self {
            k,
            t,
            l,
            c,
            d,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(RuleSpaceError::Config("K must be at least 1".into()));
        }
        if self.t == 0 {
            return Err(RuleSpaceError::Config("T must be at least 1".into()));
        }
        if self.c == 0 {
            return Err(RuleSpaceError::Config("C must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(RuleSpaceError::Config("d must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(RuleSpaceError::Config("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Number of formula levels above the statements.
    pub fn formula_levels(&self) -> usize {
        self.l.max(1) - 1
    }

    /// Width of level `l`'s input before negation augmentation (level 1
    /// reads the `K` statements, later levels read `C` formulas).
    pub fn level_input(&self, level: usize) -> usize {
        if level <= 1 {
            self.k
        } else {
            self.c
        }
    }

    /// Size of the output pool `F_0 ∪ … ∪ F_{L−1}`.
    pub fn pool_size(&self) -> usize {
        self.k + self.formula_levels() * self.c
    }

    /// Largest number of statement leaves a single pooled formula can hold.
    pub fn max_conjunction(&self) -> usize {
        1 << self.formula_levels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_sizes() {
        assert_eq!(RuleSpaceConfig::new(3, 2, 0, 2, 8).pool_size(), 3);
        assert_eq!(RuleSpaceConfig::new(3, 2, 1, 2, 8).pool_size(), 3);
        let c = RuleSpaceConfig::new(4, 2, 2, 4, 8);
        assert_eq!(c.pool_size(), 8);
        assert_eq!(c.level_input(1), 4);
        assert_eq!(RuleSpaceConfig::new(4, 2, 5, 4, 8).max_conjunction(), 16);
    }

    #[test]
    fn invalid_configs() {
        assert!(RuleSpaceConfig::new(3, 0, 0, 1, 8).validate().is_err());
        assert!(RuleSpaceConfig::new(3, 1, 0, 0, 8).validate().is_err());
        let mut c = RuleSpaceConfig::new(3, 1, 0, 1, 8);
        c.temperature = 0.0;
        assert!(c.validate().is_err());
    }
}
