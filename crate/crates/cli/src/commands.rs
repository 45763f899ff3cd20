use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use hilp_core::config::Config;
use hilp_core::diffmath::GradCheckOptions;
use hilp_core::evalmetrics::KnownFacts;
use hilp_core::extractor::{evaluate_hard, render, RuleForm};
use hilp_core::kb::{
    build_matrices, classification_queries, gen_even_successor, gen_planted_composition, toy3, AdjacencyStore,
    AugmentOptions, Dataset, PlantedOptions, PredicateTable,
};
use hilp_core::trainer::{
    check_model_gradients, extract_rules, load_checkpoint, save_checkpoint, train_with, Checkpoint, Precision,
    TrainReport,
};
use hilp_core::{RuleAst, Scalar};

use crate::manifest::{beside, RunManifest};
use crate::rules_file::{self, RuleFile};
use crate::{CheckGradArgs, EvalArgs, ExtractArgs, GenEsArgs, GenPlantedArgs, TrainArgs};

/// Largest relative gradient error `check-grad` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;

pub struct Ctx {
    pub workers: usize,
}

impl Ctx {
    pub fn new(workers: usize) -> Self {
        Self { workers }
    }
}

fn write_dataset(ctx: &Ctx, ds: &Dataset, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut m = RunManifest::start(ctx.workers);
    m.seed = seed;
    ds.write_dir(out)?;
    for name in ["meta.tsv", "facts.tsv", "train.tsv", "valid.tsv", "test.tsv"] {
        m.artifact(&out.join(name));
    }
    m.finish(&out.join("manifest.json"))?;
    let facts = ds.splits.all().count();
    println!(
        "wrote {facts} facts over {} entities and {} predicates to {} (train {}, valid {}, test {})",
        ds.kb.num_entities(),
        ds.kb.predicates.len(),
        out.display(),
        ds.splits.train.len(),
        ds.splits.valid.len(),
        ds.splits.test.len()
    );
    Ok(())
}

pub fn gen_es(ctx: &Ctx, a: &GenEsArgs) -> Result<()> {
    let (kb, splits) = gen_even_successor(a.n, a.holdout_frac)?;
    write_dataset(ctx, &Dataset::from_split(kb, splits)?, &a.out, None)
}

pub fn gen_planted(ctx: &Ctx, a: &GenPlantedArgs) -> Result<()> {
    let ds = gen_planted_composition(&PlantedOptions {
        entities: a.entities,
        noise: a.noise,
        seed: a.seed,
        ..PlantedOptions::default()
    })?;
    write_dataset(ctx, &ds, &a.out, Some(a.seed))
}

/// Defaults, then the file, then `--set` overrides.
fn resolve_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{o}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn resolve_targets(preds: &PredicateTable, names: &[String]) -> Result<Vec<usize>> {
    if names.is_empty() {
        return Ok((0..preds.len()).collect());
    }
    names
        .iter()
        .map(|n| {
            preds
                .id(n.trim())
                .ok_or_else(|| anyhow!("unknown target predicate `{n}`"))
        })
        .collect()
}

fn augmented_len(preds: &PredicateTable, augment: AugmentOptions) -> usize {
    AdjacencyStore::from_facts(preds, 0, &[], augment).len()
}

fn report_json(report: &TrainReport) -> serde_json::Value {
    let epochs: Vec<_> = report
        .epochs
        .iter()
        .map(|e| {
            json!({
                "restart": e.restart,
                "epoch": e.epoch,
                "loss": e.loss,
                "soft_valid_mrr": e.soft_valid.as_ref().and_then(|s| s.mrr),
                "soft_valid_hits_at_10": e.soft_valid.as_ref().and_then(|s| s.hits_at_10),
                "hard_valid_mrr": e.hard_valid.as_ref().and_then(|h| h.mrr),
                "hard_valid_hits_at_10": e.hard_valid.as_ref().and_then(|h| h.hits_at_10),
                "hard_valid_accuracy": e.hard_valid.as_ref().map(|h| h.accuracy),
                "seconds": e.seconds,
            })
        })
        .collect();
    json!({
        "selected_restart": report.restart,
        "selection": report.selection,
        "restart_scores": report.restart_scores,
        "best_epoch": report.best_epoch,
        "stopped_early": report.stopped_early,
        "steps": report.steps,
        "seconds": report.seconds,
        "epochs": epochs,
    })
}

fn train_as<T: Scalar>(
    ds: &Dataset,
    targets: &[usize],
    cfg: &Config,
    log_every: usize,
) -> Result<(Checkpoint<T>, TrainReport)> {
    let augment = cfg.train.augment();
    let rule = cfg.rule_config(augmented_len(&ds.kb.predicates, augment));
    let mut observer = |e: &hilp_core::trainer::EpochRecord| {
        if log_every > 0 && e.epoch.is_multiple_of(log_every) {
            let valid = e
                .soft_valid
                .as_ref()
                .and_then(|s| s.mrr)
                .map(|m| format!(" valid_mrr {m:.4}"))
                .unwrap_or_default();
            let hard = e
                .hard_valid
                .as_ref()
                .and_then(|h| h.mrr)
                .map(|m| format!(" hard_valid_mrr {m:.4}"))
                .unwrap_or_default();
            eprintln!(
                "restart {} epoch {} loss {:.5}{valid}{hard}",
                e.restart, e.epoch, e.loss
            );
        }
    };
    let (params, report) = train_with::<T>(ds, targets, &rule, &cfg.train, &mut observer)?;
    Ok((
        Checkpoint {
            params,
            predicates: ds.kb.predicates.clone(),
            targets: targets.to_vec(),
            augment,
        },
        report,
    ))
}

fn save_as<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<Vec<RuleAst>> {
    save_checkpoint(ckpt, path)?;
    let vocab = AdjacencyStore::from_facts(&ckpt.predicates, 0, &[], ckpt.augment);
    Ok(extract_rules(&ckpt.params, vocab.vocab(), &ckpt.targets)?)
}

pub fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let mut m = RunManifest::start(ctx.workers);
    let mut cfg = resolve_config(a.config.as_deref(), &a.overrides)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let ds = Dataset::load_dir(&a.kb).with_context(|| format!("loading {}", a.kb.display()))?;
    m.digest_kb_dir(&a.kb)?;
    let targets = resolve_targets(&ds.kb.predicates, &a.targets)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let started = Instant::now();
    let ckpt_path = a.out.join("model.ckpt");
    let (report, rules, rule_cfg) = match cfg.train.precision {
        Precision::F32 => {
            let (c, r) = train_as::<f32>(&ds, &targets, &cfg, a.log_every)?;
            (r, save_as(&c, &ckpt_path)?, c.params.cfg.clone())
        }
        Precision::F64 => {
            let (c, r) = train_as::<f64>(&ds, &targets, &cfg, a.log_every)?;
            (r, save_as(&c, &ckpt_path)?, c.params.cfg.clone())
        }
    };

    let rules_path = a.out.join("rules.txt");
    let file = RuleFile {
        form: RuleForm::Operator,
        rule: rule_cfg,
        augment: cfg.train.augment(),
        rules,
    };
    std::fs::write(&rules_path, rules_file::to_text(&file, &ds.kb.predicates))?;
    let report_path = a.out.join("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report_json(&report))? + "\n",
    )?;
    let config_path = a.out.join("config.conf");
    std::fs::write(&config_path, cfg.to_text())?;

    m.config = Some(cfg.to_text());
    m.seed = Some(cfg.train.seed);
    for p in [&ckpt_path, &rules_path, &report_path, &config_path] {
        m.artifact(p);
    }
    m.finish(&a.out.join("manifest.json"))?;

    println!(
        "trained {} epochs ({} steps) in {:.1}s; kept restart {} epoch {} (selection {:.4})",
        report.epochs.len(),
        report.steps,
        started.elapsed().as_secs_f64(),
        report.restart,
        report.best_epoch,
        report.selection
    );
    for r in &file.rules {
        println!("{}", render(r, &ds.kb.predicates, RuleForm::Operator));
    }
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

pub fn extract(ctx: &Ctx, a: &ExtractArgs) -> Result<()> {
    let mut m = RunManifest::start(ctx.workers);
    let ckpt =
        load_checkpoint::<f64>(&a.checkpoint, None).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let vocab = AdjacencyStore::from_facts(&ckpt.predicates, 0, &[], ckpt.augment);
    let rules = extract_rules(&ckpt.params, vocab.vocab(), &ckpt.targets)?;
    let form = if a.ast {
        RuleForm::Ast
    } else if a.variable_form {
        RuleForm::Variable
    } else {
        RuleForm::Operator
    };
    let file = RuleFile {
        form,
        rule: ckpt.params.cfg.clone(),
        augment: ckpt.augment,
        rules,
    };
    let text = rules_file::to_text(&file, &ckpt.predicates);
    std::fs::write(&a.out, &text).with_context(|| format!("writing {}", a.out.display()))?;
    m.artifact(&a.out);
    m.finish(&beside(&a.out))?;
    for r in &file.rules {
        println!("{}", render(r, &ckpt.predicates, form));
    }
    Ok(())
}

fn same_predicates(a: &PredicateTable, b: &PredicateTable) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b.iter())
            .all(|((_, x), (_, y))| x.name == y.name && x.arity == y.arity)
}

pub fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let ds = Dataset::load_dir(&a.kb).with_context(|| format!("loading {}", a.kb.display()))?;
    let preds = &ds.kb.predicates;
    let (rules, rule_cfg, augment) = match (&a.checkpoint, &a.rules) {
        (Some(_), Some(_)) => bail!("--checkpoint and --rules are mutually exclusive"),
        (Some(path), None) => {
            let ckpt = load_checkpoint::<f64>(path, None).with_context(|| format!("loading {}", path.display()))?;
            if !same_predicates(&ckpt.predicates, preds) {
                bail!("checkpoint predicates differ from those of {}", a.kb.display());
            }
            let vocab = AdjacencyStore::from_facts(preds, 0, &[], ckpt.augment);
            let rules = extract_rules(&ckpt.params, vocab.vocab(), &ckpt.targets)?;
            (rules, ckpt.params.cfg, ckpt.augment)
        }
        (None, Some(path)) => {
            let f = rules_file::read(path, preds)?;
            (f.rules, f.rule, f.augment)
        }
        (None, None) => bail!("one of --checkpoint or --rules is required"),
    };
    let facts = match a.split.as_str() {
        "train" => &ds.splits.train,
        "valid" => &ds.splits.valid,
        "test" => &ds.splits.test,
        other => bail!("unknown split `{other}` (expected train, valid or test)"),
    };
    let store = build_matrices(&ds.kb, augment.add_inverses, augment.add_identity);
    if store.len() != rule_cfg.k {
        bail!(
            "rules were built for {} operators but the knowledge base gives {}",
            rule_cfg.k,
            store.len()
        );
    }
    let heads: Vec<usize> = rules.iter().map(|r| r.head).collect();
    let queries = classification_queries(&ds, facts, &heads, a.seed)?;
    if queries.is_empty() {
        bail!("the {} split has no facts for the rule heads", a.split);
    }
    let known = KnownFacts::new(ds.splits.all());
    let metrics = evaluate_hard(&rules, &ds.kb, &store, &rule_cfg, &queries, &known, a.threshold)?;

    let positives = queries.iter().filter(|q| q.label).count();
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
    let block = format!(
        "split {}\nqueries {} (positives {}, negatives {})\naccuracy {:.6}\nmrr {}\nhits@10 {}\n",
        a.split,
        queries.len(),
        positives,
        queries.len() - positives,
        metrics.accuracy,
        fmt(metrics.mrr),
        fmt(metrics.hits_at_10),
    );
    print!("{block}");
    if let Some(out) = &a.out {
        let mut m = RunManifest::start(ctx.workers);
        m.seed = Some(a.seed);
        m.digest_kb_dir(&a.kb)?;
        std::fs::write(out, &block).with_context(|| format!("writing {}", out.display()))?;
        m.artifact(out);
        m.finish(&beside(out))?;
    }
    Ok(())
}

pub fn check_grad(_ctx: &Ctx, a: &CheckGradArgs) -> Result<()> {
    let mut cfg = resolve_config(a.config.as_deref(), &[])?;
    cfg.train.seed = a.seed;
    let kb = toy3();
    let augment = cfg.train.augment();
    let rule = cfg.rule_config(augmented_len(&kb.predicates, augment));
    let targets: Vec<usize> = (0..kb.predicates.len()).collect();
    let opts = GradCheckOptions {
        per_tensor: Some(a.per_tensor),
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let report = check_model_gradients(&kb, &targets, &rule, &cfg.train, &opts)?;
    let worst = report
        .worst
        .as_ref()
        .map(|(n, i)| format!(" at {n}[{i}]"))
        .unwrap_or_default();
    println!(
        "max relative error {:.3e}{worst} over {} coordinates",
        report.max_rel_error, report.checked
    );
    if report.max_rel_error < GRAD_TOLERANCE {
        println!("pass");
        Ok(())
    } else {
        bail!(
            "gradient check failed: {:.3e} >= {GRAD_TOLERANCE:e}",
            report.max_rel_error
        )
    }
}
