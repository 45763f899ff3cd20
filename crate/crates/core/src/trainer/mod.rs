//! Stochastic training of the attention generator.
//!
//! Every step first generates one attention bundle per target predicate
//! (the generation phase reads only the parameters and the target id), then
//! scores a minibatch of positive and sampled negative queries per target
//! through the relaxed rule space, averages the per-target cross-entropies
//! and takes one Adam step. Positive queries are scored with their own fact
//! masked out of the operator matrices, otherwise the trivial statement
//! `P(X, X′)` explains every training fact.

mod adam;
mod checkpoint;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::{config_digest, load_checkpoint, save_checkpoint, Checkpoint};

use crate::diffmath::{finite_diff_check, GradCheckOptions, GradCheckReport, Graph, Scalar, Tensor, TensorError};
use crate::evalmetrics::{accuracy, rank_queries, Corruption, KnownFacts, MetricsError, RankingResult};
use crate::extractor::{evaluate_hard, extract, ExtractError, HardMetrics, RuleAst, DEFAULT_THRESHOLD};
use crate::kb::{
    build_matrices, positive_queries, sample_negative_queries, AdjacencyStore, Dataset, Fact, KbError, KnowledgeBase,
    Query,
};
use crate::rulegen::{ModelParams, RuleGenError};
use crate::rulespace::{
    diagonal_scores, harden, head_scores, rule_space_scores, score_queries, score_queries_with, tail_scores,
    AttentionBundle, QueryMasks, RuleSpaceConfig, RuleSpaceError,
};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("no target predicates given")]
    NoTargets,
    #[error("target predicate id {0} is not a base predicate")]
    UnknownTarget(usize),
    #[error("target predicate `{0}` has no training facts")]
    NoPositives(String),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("empty query batch")]
    EmptyBatch,
    #[error("negative query {0} is also a positive of the batch")]
    LabelOverlap(Query),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("checkpoint digest mismatch: {0}")]
    DigestMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    RuleGen(#[from] RuleGenError),
    #[error(transparent)]
    RuleSpace(#[from] RuleSpaceError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Element type used for parameters and rule-space evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("precision must be f32 or f64, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Positive queries per target per step.
    pub batch_size: usize,
    /// Sampled negatives per positive.
    pub negatives: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; `0` never
    /// stops early.
    pub patience: usize,
    pub precision: Precision,
    /// Hide each positive query's own fact while scoring it.
    pub masks: bool,
    pub add_inverses: bool,
    pub add_identity: bool,
    /// Validation runs every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Also extract hard rules and evaluate them on the validation split.
    pub hard_eval: bool,
    /// Independent runs from derived seeds; the best one is kept.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            negatives: 1.0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 300,
            seed: 0,
            patience: 20,
            precision: Precision::F32,
            masks: true,
            add_inverses: true,
            add_identity: true,
            eval_every: 1,
            hard_eval: true,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.negatives >= 0.0 && self.negatives.is_finite()) {
            return bad("negatives must be a finite non-negative ratio");
        }
        // A zero rate is accepted: it freezes the parameters, which is
        // useful for probing the pipeline.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        Ok(())
    }

    pub fn augment(&self) -> crate::kb::AugmentOptions {
        crate::kb::AugmentOptions {
            add_inverses: self.add_inverses,
            add_identity: self.add_identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftMetrics {
    /// `None` when there were no positive queries.
    pub mrr: Option<f64>,
    pub hits_at_10: Option<f64>,
    /// Fraction of queries with `score > 0.5` exactly when labelled true.
    pub accuracy: f64,
    pub ranking: RankingResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub restart: usize,
    pub epoch: usize,
    /// Mean step loss of the epoch.
    pub loss: f64,
    pub soft_valid: Option<SoftMetrics>,
    pub hard_valid: Option<HardMetrics>,
    /// Wall-clock seconds of the epoch's steps, excluding validation.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub steps: usize,
    pub seconds: f64,
    /// Restart this report belongs to.
    pub restart: usize,
    /// Score used to pick among restarts: the best validation MRR (the
    /// lower of soft and hardened when `hard_eval` is on), or the hardened
    /// rules' training fit when there are no validation facts.
    pub selection: f64,
    /// Selection score of every restart, in order.
    pub restart_scores: Vec<f64>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Queries of one target scored in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    pub target: usize,
    pub queries: Vec<Query>,
}

/// Parameters, optimizer state and the operator matrices of one run.
pub struct Trainer<T: Scalar> {
    params: ModelParams<T>,
    opt: Adam<T>,
    store: Arc<AdjacencyStore>,
    cfg: TrainConfig,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(params: ModelParams<T>, store: Arc<AdjacencyStore>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if params.cfg.k != store.len() {
            return Err(RuleSpaceError::Config(format!(
                "config has K = {}, store has {} operators",
                params.cfg.k,
                store.len()
            ))
            .into());
        }
        let opt = Adam::new(&params.store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
        Ok(Self {
            params,
            opt,
            store,
            cfg: cfg.clone(),
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn store(&self) -> &Arc<AdjacencyStore> {
        &self.store
    }

    /// `positives` plus `round(ρ · |positives|)` negatives drawn from the
    /// zero entries of the target's matrix, capped at the number available.
    /// `draw` indexes the negative stream so every step draws afresh.
    pub fn batch(&self, target: usize, positives: &[Query], draw: u64) -> Result<TargetBatch> {
        if positives.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let m = self.store.matrix(target);
        let n = self.store.num_entities();
        let zeros = if self.store.is_unary(target) {
            n - m.nnz()
        } else {
            n * n - m.nnz()
        };
        let want = ((self.cfg.negatives * positives.len() as f64).round() as usize).min(zeros);
        let mut queries = positives.to_vec();
        if want > 0 {
            let s = seed::derive(self.cfg.seed, seed::stream::NEGATIVES, draw);
            let neg = sample_negative_queries(&self.store, target, want, s)?;
            let pos: HashSet<_> = positives.iter().map(Query::fact).collect();
            if let Some(q) = neg.rows.iter().find(|q| pos.contains(&q.fact())) {
                return Err(TrainError::LabelOverlap(*q));
            }
            queries.extend(neg.rows);
        }
        Ok(TargetBatch { target, queries })
    }

    /// Mean over targets of the batch cross-entropy, and its gradient in
    /// parameter-store order.
    pub fn loss_and_grads(&self, batches: &[TargetBatch]) -> Result<(f64, Vec<Tensor<T>>)> {
        batch_loss(&self.params, &self.store, self.cfg.masks, batches)
    }

    /// One optimizer update; returns the loss before the update.
    pub fn step(&mut self, batches: &[TargetBatch]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(batches)?;
        if loss.is_finite() {
            self.opt.step(&mut self.params.store, &grads);
        }
        Ok(loss)
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }
}

fn batch_loss<T: Scalar>(
    params: &ModelParams<T>,
    store: &Arc<AdjacencyStore>,
    masks: bool,
    batches: &[TargetBatch],
) -> Result<(f64, Vec<Tensor<T>>)> {
    if batches.is_empty() || batches.iter().any(|b| b.queries.is_empty()) {
        return Err(TrainError::EmptyBatch);
    }
    let mut g = Graph::new();
    let p = params.store.bind(&mut g);
    let mut total = None;
    for b in batches {
        let vars = params.generate_vars(&mut g, &p, b.target)?;
        let masks = masks.then(|| QueryMasks::leave_one_out(store, &b.queries));
        let scores = rule_space_scores(&mut g, store.clone(), &params.cfg, &vars.attn, &b.queries, masks)?;
        let labels: Vec<T> = b
            .queries
            .iter()
            .map(|q| if q.label { T::one() } else { T::zero() })
            .collect();
        let ce = g.cross_entropy(scores, &labels)?;
        total = Some(match total {
            None => ce,
            Some(t) => g.add(t, ce)?,
        });
    }
    let total = total.expect("at least one batch");
    let loss = g.scale(total, T::one() / T::from_usize(batches.len()))?;
    let grads = g.backward(loss)?;
    let out = p
        .iter()
        .zip(params.store.tensors())
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((g.value(loss).item().as_f64(), out))
}

/// Compares the analytic gradient of the full training loss (generator and
/// rule space) with central differences, in `f64`, on one batch per target
/// holding all of the target's facts and the configured negatives.
pub fn check_model_gradients(
    kb: &KnowledgeBase,
    targets: &[usize],
    rule: &RuleSpaceConfig,
    cfg: &TrainConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    check_targets(kb, targets)?;
    let store = Arc::new(build_matrices(kb, cfg.add_inverses, cfg.add_identity));
    let trainer = Trainer::new(ModelParams::<f64>::new(rule, cfg.seed)?, store.clone(), cfg)?;
    let batches = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| trainer.batch(t, &positive_queries(&kb.facts, t).rows, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let (_, analytic) = trainer.loss_and_grads(&batches)?;
    let mut model = trainer.into_params();
    let mut store_params = model.store.clone();
    let mut failure = None;
    let report = finite_diff_check(
        &mut store_params,
        &analytic,
        |ps| {
            model.store = ps.clone();
            match batch_loss(&model, &store, cfg.masks, &batches) {
                Ok((l, _)) => Ok(l),
                Err(e) => {
                    failure = Some(e);
                    Ok(f64::NAN)
                }
            }
        },
        opts,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

fn check_targets(kb: &KnowledgeBase, targets: &[usize]) -> Result<()> {
    if targets.is_empty() {
        return Err(TrainError::NoTargets);
    }
    for &t in targets {
        if t >= kb.predicates.len() {
            return Err(TrainError::UnknownTarget(t));
        }
    }
    Ok(())
}

/// Positive queries of `facts` whose predicate is one of `targets`.
pub fn target_queries<'a>(facts: impl IntoIterator<Item = &'a crate::kb::Fact>, targets: &[usize]) -> Vec<Query> {
    let facts: Vec<_> = facts.into_iter().collect();
    targets
        .iter()
        .flat_map(|&t| positive_queries(facts.iter().copied(), t).rows)
        .collect()
}

/// Trains on `dataset.kb` (the training facts) for `targets`. Within a run
/// the kept parameters are those of the best validation epoch; without
/// validation facts for the targets, of the lowest-loss epoch. With several
/// restarts, the run with the best selection score is returned (see
/// [`TrainReport::selection`]).
pub fn train<T: Scalar>(
    dataset: &Dataset,
    targets: &[usize],
    rule: &RuleSpaceConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, TrainReport)> {
    train_with(dataset, targets, rule, cfg, &mut |_| {})
}

/// [`train`], calling `observer` after every epoch of every restart.
pub fn train_with<T: Scalar>(
    dataset: &Dataset,
    targets: &[usize],
    rule: &RuleSpaceConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(ModelParams<T>, TrainReport)> {
    let started = Instant::now();
    cfg.validate()?;
    let kb = &dataset.kb;
    check_targets(kb, targets)?;
    let store = Arc::new(build_matrices(kb, cfg.add_inverses, cfg.add_identity));
    let mut positives = Vec::with_capacity(targets.len());
    for &t in targets {
        let rows = positive_queries(&kb.facts, t).rows;
        if rows.is_empty() {
            return Err(TrainError::NoPositives(kb.predicates.name(t).to_string()));
        }
        positives.push(rows);
    }
    let run = Run {
        dataset,
        targets,
        rule,
        store,
        positives,
        valid: target_queries(&dataset.splits.valid, targets),
        known: KnownFacts::new(dataset.splits.all()),
    };

    let mut best: Option<(ModelParams<T>, TrainReport)> = None;
    let mut scores = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let seed = if r == 0 {
            cfg.seed
        } else {
            seed::derive(cfg.seed, seed::stream::RESTART, r as u64)
        };
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let (params, mut report) = run.once(&run_cfg, r, observer)?;
        report.selection = if run.valid.is_empty() {
            run.training_fit(&params, &run_cfg)?
        } else {
            report.selection
        };
        scores.push(report.selection);
        if best.as_ref().is_none_or(|(_, b)| report.selection > b.selection) {
            best = Some((params, report));
        }
    }
    let (params, mut report) = best.expect("at least one restart");
    report.restart_scores = scores;
    report.seconds = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Inputs shared by the restarts of one training call.
struct Run<'a> {
    dataset: &'a Dataset,
    targets: &'a [usize],
    rule: &'a RuleSpaceConfig,
    store: Arc<AdjacencyStore>,
    positives: Vec<Vec<Query>>,
    valid: Vec<Query>,
    known: KnownFacts,
}

impl Run<'_> {
    fn once<T: Scalar>(
        &self,
        cfg: &TrainConfig,
        restart: usize,
        observer: &mut dyn FnMut(&EpochRecord),
    ) -> Result<(ModelParams<T>, TrainReport)> {
        let started = Instant::now();
        let (targets, store) = (self.targets, &self.store);
        let params = ModelParams::<T>::new(self.rule, cfg.seed)?;
        let mut trainer = Trainer::new(params, store.clone(), cfg)?;
        let steps_per_epoch = self
            .positives
            .iter()
            .map(|p| p.len().div_ceil(cfg.batch_size))
            .max()
            .unwrap_or(1);

        let mut report = TrainReport {
            restart,
            ..TrainReport::default()
        };
        let mut best: Option<(f64, ModelParams<T>)> = None;
        let mut since_best = 0;
        let nt = targets.len() as u64;
        for epoch in 0..cfg.epochs {
            let t0 = Instant::now();
            let chunks: Vec<Vec<Vec<Query>>> = self
                .positives
                .iter()
                .enumerate()
                .map(|(ti, rows)| {
                    let mut rows = rows.clone();
                    rows.shuffle(&mut seed::rng(
                        cfg.seed,
                        seed::stream::SHUFFLE,
                        epoch as u64 * nt + ti as u64,
                    ));
                    rows.chunks(cfg.batch_size).map(<[Query]>::to_vec).collect()
                })
                .collect();
            let mut loss_sum = 0.0;
            for s in 0..steps_per_epoch {
                let step = report.steps as u64;
                let batches = targets
                    .iter()
                    .zip(&chunks)
                    .enumerate()
                    .map(|(ti, (&t, c))| trainer.batch(t, &c[s % c.len()], step * nt + ti as u64))
                    .collect::<Result<Vec<_>>>()?;
                let loss = trainer.step(&batches)?;
                if !loss.is_finite() {
                    return Err(TrainError::Divergence { epoch, step: s });
                }
                loss_sum += loss;
                report.steps += 1;
            }
            let mut record = EpochRecord {
                restart,
                epoch,
                loss: loss_sum / steps_per_epoch as f64,
                soft_valid: None,
                hard_valid: None,
                seconds: t0.elapsed().as_secs_f64(),
            };

            let last = epoch + 1 == cfg.epochs;
            let score = if self.valid.is_empty() {
                -record.loss
            } else if epoch % cfg.eval_every == 0 || last {
                let soft = evaluate_soft(trainer.params(), store, &self.valid, &self.known)?;
                let mut mrr = soft.mrr.unwrap_or(0.0);
                record.soft_valid = Some(soft);
                if cfg.hard_eval {
                    let rules = extract_rules(trainer.params(), store.vocab(), targets)?;
                    let hard = evaluate_hard(
                        &rules,
                        &self.dataset.kb,
                        store,
                        self.rule,
                        &self.valid,
                        &self.known,
                        DEFAULT_THRESHOLD,
                    )?;
                    // Kept parameters must rank well both soft and hardened.
                    mrr = mrr.min(hard.mrr.unwrap_or(0.0));
                    record.hard_valid = Some(hard);
                }
                mrr
            } else {
                f64::NEG_INFINITY
            };
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, trainer.params().clone()));
                report.best_epoch = epoch;
                report.selection = score;
                since_best = 0;
            } else {
                since_best += 1;
            }
            observer(&record);
            report.epochs.push(record);
            if cfg.patience > 0 && since_best >= cfg.patience {
                report.stopped_early = !last;
                break;
            }
        }
        report.seconds = started.elapsed().as_secs_f64();
        let params = match best {
            Some((_, p)) => p,
            None => trainer.into_params(),
        };
        Ok((params, report))
    }

    /// Balanced accuracy of the hardened rules on the training queries,
    /// averaged over targets: every positive, scored with its own fact
    /// masked, against every negative of a unary target or the configured
    /// share of sampled negatives of a binary one. Balancing keeps a rule
    /// that rejects everything from winning on a mostly negative set.
    fn training_fit<T: Scalar>(&self, params: &ModelParams<T>, cfg: &TrainConfig) -> Result<f64> {
        let trainer = Trainer::new(params.clone(), self.store.clone(), cfg)?;
        let mut fit = 0.0;
        for (ti, (&t, pos)) in self.targets.iter().zip(&self.positives).enumerate() {
            let queries = if self.store.is_unary(t) {
                let mut qs = pos.clone();
                qs.extend(
                    (0..self.store.num_entities())
                        .filter(|&e| !self.store.contains(&Fact::unary(e, t)))
                        .map(|e| Query {
                            subject: e,
                            predicate: t,
                            object: e,
                            label: false,
                        }),
                );
                qs
            } else {
                trainer.batch(t, pos, u64::MAX - ti as u64)?.queries
            };
            let hard = harden(&params.generate(t)?.bundle);
            let masks = cfg.masks.then(|| QueryMasks::leave_one_out(&self.store, &queries));
            let scores = score_queries_with(&self.store, &params.cfg, &hard, &queries, masks.as_ref(), false)?.scores;
            let mut hits = [0usize; 2];
            let mut counts = [0usize; 2];
            for (q, s) in queries.iter().zip(scores) {
                let c = usize::from(q.label);
                counts[c] += 1;
                hits[c] += usize::from((s.as_f64() > DEFAULT_THRESHOLD) == q.label);
            }
            let rate = |c: usize| {
                if counts[c] == 0 {
                    1.0
                } else {
                    hits[c] as f64 / counts[c] as f64
                }
            };
            fit += (rate(0) + rate(1)) / 2.0;
        }
        Ok(fit / self.targets.len() as f64)
    }
}

/// Hardened rule of every target, read out of freshly generated bundles.
pub fn extract_rules<T: Scalar>(
    params: &ModelParams<T>,
    vocab: &crate::kb::PredicateTable,
    targets: &[usize],
) -> Result<Vec<RuleAst>> {
    targets
        .iter()
        .map(|&t| {
            let bundle = harden(&params.generate(t)?.bundle);
            Ok(extract(&bundle, &params.cfg, vocab, t)?)
        })
        .collect()
}

/// Soft scores of the generated rules: filtered ranks of the positive
/// queries, and accuracy at `0.5`.
pub fn evaluate_soft<T: Scalar>(
    params: &ModelParams<T>,
    store: &AdjacencyStore,
    queries: &[Query],
    known: &KnownFacts,
) -> Result<SoftMetrics> {
    if queries.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let cfg = &params.cfg;
    let mut bundles: Vec<(usize, AttentionBundle<T>)> = Vec::new();
    for q in queries {
        if !bundles.iter().any(|(t, _)| *t == q.predicate) {
            bundles.push((q.predicate, params.generate(q.predicate)?.bundle));
        }
    }
    let bundle = |p: usize| &bundles.iter().find(|(t, _)| *t == p).expect("generated above").1;

    let mut predictions = vec![false; queries.len()];
    for (p, b) in &bundles {
        let idx: Vec<usize> = (0..queries.len()).filter(|&i| queries[i].predicate == *p).collect();
        let batch: Vec<Query> = idx.iter().map(|&i| queries[i]).collect();
        let scores = score_queries(store, cfg, b, &batch)?.scores;
        for (&i, s) in idx.iter().zip(scores) {
            predictions[i] = s.as_f64() > 0.5;
        }
    }
    let labels: Vec<bool> = queries.iter().map(|q| q.label).collect();
    let accuracy = accuracy(&predictions, &labels)?;

    let to_f64 = |v: Vec<T>| v.into_iter().map(Scalar::as_f64).collect::<Vec<f64>>();
    let ranking = rank_queries(
        queries,
        known,
        |p| store.is_unary(p),
        |c| -> Result<Vec<f64>> {
            Ok(to_f64(match c {
                Corruption::Tail { predicate, subject } => tail_scores(store, cfg, bundle(predicate), subject)?,
                Corruption::Head { predicate, object } => head_scores(store, cfg, bundle(predicate), object)?,
                Corruption::Unary { predicate } => diagonal_scores(store, cfg, bundle(predicate), predicate)?,
            }))
        },
    )?;
    let (mrr, hits_at_10) = if ranking.ranks.is_empty() {
        (None, None)
    } else {
        (Some(ranking.mrr()?), Some(ranking.hits_at(10)?))
    };
    Ok(SoftMetrics {
        mrr,
        hits_at_10,
        accuracy,
        ranking,
    })
}

/// Checks that the attentions a training step feeds to each query of
/// `batch` are the same tensors, bit for bit: the batch graph's bundle is
/// compared with bundles generated in a separate graph per query. Returns
/// the indices of queries whose attentions differ; empty when independent.
pub fn check_query_independence<T: Scalar>(
    params: &ModelParams<T>,
    store: Arc<AdjacencyStore>,
    batch: &TargetBatch,
) -> Result<Vec<usize>> {
    if batch.queries.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let capture = |queries: &[Query]| -> Result<Vec<Vec<u8>>> {
        let mut g = Graph::new();
        let p = params.store.bind(&mut g);
        let vars = params.generate_vars(&mut g, &p, batch.target)?;
        let masks = QueryMasks::leave_one_out(&store, queries);
        rule_space_scores(&mut g, store.clone(), &params.cfg, &vars.attn, queries, Some(masks))?;
        Ok(vars
            .attn
            .ordered()
            .into_iter()
            .map(|v| {
                let mut bytes = Vec::new();
                for &x in g.value(v).data() {
                    x.to_le_bytes_vec(&mut bytes);
                }
                bytes
            })
            .collect())
    };
    let shared = capture(&batch.queries)?;
    let mut differing = Vec::new();
    for (i, q) in batch.queries.iter().enumerate() {
        if capture(std::slice::from_ref(q))? != shared {
            differing.push(i);
        }
    }
    Ok(differing)
}

#[cfg(test)]
mod tests;
