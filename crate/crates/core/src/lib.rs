//! Differentiable rule learning over relational knowledge bases.
//!
//! The crate relaxes a hierarchical space of first-order rules (operator
//! paths, primitive statements, soft-logic formula levels) into
//! attention-weighted sums. The attentions are produced by a stack of
//! transformer networks conditioned only on the target predicate, trained
//! end to end with cross-entropy, and finally hardened into explicit rules.
//!
//! Module map:
//!
//! - [`config`]: flat `key = value` run configuration files.
//! - [`kb`]: entity and predicate tables, fact loading, sparse adjacency
//!   matrices, synthetic benchmarks and query sampling.
//! - [`diffmath`]: a small reverse-mode autodiff graph, the transformer
//!   building blocks, and a finite-difference gradient checker.
//! - [`rulespace`]: evaluation of the relaxed rule space for a batch of
//!   queries, its analytic backward pass, and fast candidate ranking.
//! - [`rulegen`]: the query-independent attention generator.
//! - [`trainer`]: the stochastic training loop, optimizer and checkpoints.
//! - [`extractor`]: hard rule extraction, rendering, parsing, the grounding
//!   oracle and hard evaluation.
//! - [`evalmetrics`]: filtered ranking and classification metrics.

// Numeric kernels index several parallel buffers by one loop variable, and
// the batched evaluators take their buffers explicitly.
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod config;
pub mod diffmath;
pub mod evalmetrics;
pub mod extractor;
pub mod kb;
pub mod rulegen;
pub mod rulespace;
pub mod seed;
pub mod trainer;

pub use config::Config;
pub use diffmath::{Graph, Scalar, Tensor, TensorError, Var};
pub use extractor::{Formula, RuleAst, StatementAst};
pub use kb::{AdjacencyStore, Dataset, Fact, KbError, KnowledgeBase, Query, QueryBatch};
pub use rulegen::{GeneratorOutput, ModelParams};
pub use rulespace::{AttentionBundle, RuleSpaceConfig, ScoreBatch};
pub use trainer::{TrainConfig, TrainReport};
