use super::*;
use crate::kb::{gen_even_successor, toy3, SplitDataset};

fn es(n: usize) -> (Dataset, Vec<usize>) {
    let (kb, splits) = gen_even_successor(n, 0.2).unwrap();
    let targets = vec![kb.predicates.id("Even").unwrap(), kb.predicates.id("Zero").unwrap()];
    (Dataset::from_split(kb, splits).unwrap(), targets)
}

fn rule_cfg(store: &AdjacencyStore) -> RuleSpaceConfig {
    RuleSpaceConfig::new(store.len(), 2, 1, 2, 8)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 1e-2,
        hard_eval: false,
        ..TrainConfig::default()
    }
}

fn trainer(ds: &Dataset, cfg: &TrainConfig) -> Trainer<f64> {
    let store = Arc::new(build_matrices(&ds.kb, true, true));
    let params = ModelParams::new(&rule_cfg(&store), 3).unwrap();
    Trainer::new(params, store, cfg).unwrap()
}

fn fixed_batches(tr: &Trainer<f64>, ds: &Dataset, targets: &[usize]) -> Vec<TargetBatch> {
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| tr.batch(t, &positive_queries(&ds.kb.facts, t).rows, i as u64).unwrap())
        .collect()
}

#[test]
fn zero_rate_leaves_parameters_unchanged() {
    let (ds, targets) = es(10);
    let cfg = TrainConfig { lr: 0.0, ..quick(1) };
    let mut tr = trainer(&ds, &cfg);
    let before = tr.params().clone();
    let batches = fixed_batches(&tr, &ds, &targets);
    for _ in 0..5 {
        tr.step(&batches).unwrap();
    }
    assert_eq!(tr.params(), &before);
}

#[test]
fn fixed_batch_loss_mostly_descends() {
    let (ds, targets) = es(10);
    let cfg = TrainConfig { lr: 1e-4, ..quick(1) };
    let mut tr = trainer(&ds, &cfg);
    let batches = fixed_batches(&tr, &ds, &targets);
    let losses: Vec<f64> = (0..21).map(|_| tr.step(&batches).unwrap()).collect();
    let descents = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(descents >= 18, "{losses:?}");
}

#[test]
fn batches_carry_the_requested_negatives() {
    let (ds, targets) = es(10);
    let tr = trainer(
        &ds,
        &TrainConfig {
            negatives: 2.0,
            ..quick(1)
        },
    );
    let even = targets[0];
    let pos = positive_queries(&ds.kb.facts, even).rows;
    let b = tr.batch(even, &pos, 0).unwrap();
    let neg: Vec<_> = b.queries.iter().filter(|q| !q.label).collect();
    // Ten entities, four training evens: six zero diagonal cells remain
    // (the odd numbers and the held-out even one).
    assert_eq!(neg.len(), (2 * pos.len()).min(6));
    assert!(neg
        .iter()
        .all(|q| q.subject == q.object && !pos.iter().any(|p| p.subject == q.subject)));
    // With fewer negatives than zeros, each draw index gives its own sample.
    let tr = trainer(
        &ds,
        &TrainConfig {
            negatives: 0.5,
            ..quick(1)
        },
    );
    let draws: HashSet<Vec<Query>> = (0..8).map(|i| tr.batch(even, &pos, i).unwrap().queries).collect();
    assert!(draws.len() > 1);
    assert_eq!(tr.batch(even, &[], 0).unwrap_err(), TrainError::EmptyBatch);
}

#[test]
fn training_is_deterministic() {
    let (ds, targets) = es(10);
    let rule = RuleSpaceConfig::new(5, 2, 1, 2, 8);
    let cfg = quick(4);
    let (p1, r1) = train::<f64>(&ds, &targets, &rule, &cfg).unwrap();
    let (p2, r2) = train::<f64>(&ds, &targets, &rule, &cfg).unwrap();
    assert_eq!(r1.losses(), r2.losses());
    assert_eq!(p1, p2);
    assert!(r1.losses().iter().all(|l| l.is_finite()));
    assert_eq!(r1.steps, 4);
}

#[test]
fn training_preconditions() {
    let (ds, _) = es(10);
    let rule = RuleSpaceConfig::new(5, 2, 1, 2, 8);
    assert_eq!(
        train::<f64>(&ds, &[], &rule, &quick(1)).unwrap_err(),
        TrainError::NoTargets
    );
    assert_eq!(
        train::<f64>(&ds, &[9], &rule, &quick(1)).unwrap_err(),
        TrainError::UnknownTarget(9)
    );
    let bad = TrainConfig {
        batch_size: 0,
        ..quick(1)
    };
    assert!(matches!(
        train::<f64>(&ds, &[0], &rule, &bad),
        Err(TrainError::Config(_))
    ));
    let wrong_k = RuleSpaceConfig::new(4, 2, 1, 2, 8);
    assert!(matches!(
        train::<f64>(&ds, &[0], &wrong_k, &quick(1)),
        Err(TrainError::RuleSpace(_))
    ));

    // A target without training facts.
    let kb = toy3();
    let mut splits = SplitDataset {
        train: kb.facts.clone(),
        ..Default::default()
    };
    let moved = splits.train.iter().position(|f| f.predicate == 0).unwrap();
    let f = splits.train.remove(moved);
    splits.test.push(f);
    while let Some(i) = splits.train.iter().position(|f| f.predicate == 0) {
        let f = splits.train.remove(i);
        splits.test.push(f);
    }
    let ds = Dataset::from_split(kb, splits).unwrap();
    let store = build_matrices(&ds.kb, true, true);
    let rule = RuleSpaceConfig::new(store.len(), 2, 1, 2, 8);
    assert!(matches!(
        train::<f64>(&ds, &[0], &rule, &quick(1)),
        Err(TrainError::NoPositives(_))
    ));
}

#[test]
fn soft_evaluation_of_empty_set_is_an_error() {
    let (ds, _) = es(10);
    let tr = trainer(&ds, &quick(1));
    let known = KnownFacts::new(&ds.kb.facts);
    assert_eq!(
        evaluate_soft(tr.params(), tr.store(), &[], &known).unwrap_err(),
        TrainError::EmptyBatch
    );
    let qs = target_queries(&ds.splits.test, &[0]);
    let m = evaluate_soft(tr.params(), tr.store(), &qs, &known).unwrap();
    assert_eq!(m.ranking.ranks.len(), qs.len());
    assert!(m.mrr.unwrap() > 0.0 && m.mrr.unwrap() <= 1.0);
}

#[test]
fn attentions_are_shared_by_all_queries_of_a_step() {
    let (ds, targets) = es(10);
    let tr = trainer(&ds, &quick(1));
    for b in fixed_batches(&tr, &ds, &targets) {
        let differing = check_query_independence(tr.params(), tr.store().clone(), &b).unwrap();
        assert!(differing.is_empty());
    }
}

#[test]
fn checkpoint_round_trip_and_digest_checks() {
    let (ds, targets) = es(10);
    let tr = trainer(&ds, &quick(1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ckpt = Checkpoint {
        params: tr.params().clone(),
        predicates: ds.kb.predicates.clone(),
        targets: targets.clone(),
        augment: crate::kb::AugmentOptions::default(),
    };
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint::<f64>(&path, Some(&tr.params().cfg)).unwrap();
    assert_eq!(back, ckpt);
    for (a, b) in back.params.store.tensors().iter().zip(ckpt.params.store.tensors()) {
        let bits = |t: &Tensor<f64>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }

    let mut other = tr.params().cfg.clone();
    other.c = 3;
    assert!(matches!(
        load_checkpoint::<f64>(&path, Some(&other)),
        Err(TrainError::DigestMismatch(_))
    ));

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint::<f64>(&path, None),
        Err(TrainError::DigestMismatch(_))
    ));

    assert!(matches!(
        load_checkpoint::<f64>(&dir.path().join("missing"), None),
        Err(TrainError::Io { .. })
    ));
}

#[test]
fn f32_checkpoints_round_trip() {
    let (ds, targets) = es(10);
    let tr = trainer(&ds, &quick(1));
    let ckpt = Checkpoint {
        params: tr.params().cast::<f32>(),
        predicates: ds.kb.predicates.clone(),
        targets,
        augment: crate::kb::AugmentOptions::default(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    assert_eq!(load_checkpoint::<f32>(&path, None).unwrap(), ckpt);
    // Widening is exact.
    assert_eq!(
        load_checkpoint::<f64>(&path, None).unwrap().params,
        ckpt.params.cast::<f64>()
    );
}

#[test]
fn training_config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig {
            negatives: -1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr: f64::NAN,
            ..TrainConfig::default()
        },
        TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            eps: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            eval_every: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    }
    assert_eq!("f32".parse::<Precision>().unwrap(), Precision::F32);
    assert!("f16".parse::<Precision>().is_err());
}

#[test]
fn model_gradients_match_finite_differences_on_toy3() {
    let kb = toy3();
    let store = build_matrices(&kb, true, true);
    let rule = RuleSpaceConfig::new(store.len(), 2, 2, 2, 8);
    let opts = crate::diffmath::GradCheckOptions {
        per_tensor: Some(6),
        ..Default::default()
    };
    let targets: Vec<usize> = (0..kb.predicates.len()).collect();
    let report = check_model_gradients(&kb, &targets, &rule, &quick(1), &opts).unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn restarts_keep_the_best_selection_score() {
    let (ds, targets) = es(10);
    let rule = RuleSpaceConfig::new(4, 2, 1, 2, 8);
    let cfg = TrainConfig {
        restarts: 3,
        add_identity: false,
        ..quick(3)
    };
    let (params, report) = train::<f64>(&ds, &targets, &rule, &cfg).unwrap();
    assert_eq!(report.restart_scores.len(), 3);
    let best = report.restart_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.selection, best);
    assert_eq!(
        report.restart_scores.iter().position(|&s| s == best),
        Some(report.restart)
    );
    // Restart zero is the plain run with the configured seed.
    let (first, _) = train::<f64>(
        &ds,
        &targets,
        &rule,
        &TrainConfig {
            restarts: 1,
            ..cfg.clone()
        },
    )
    .unwrap();
    if report.restart == 0 {
        assert_eq!(params, first);
    }
    assert!(report.restart_scores.iter().all(|s| (0.0..=1.0).contains(s)));
}
