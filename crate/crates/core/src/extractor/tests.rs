use std::collections::HashSet;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::evalmetrics::KnownFacts;
use crate::kb::{build_matrices, gen_even_successor, gen_random_kb, toy3, Fact, KnowledgeBase, Query};
use crate::rulespace::{harden, score_queries, AttentionBundle};
use crate::seed;
use crate::Tensor;

fn one_hot(rows: &[usize], cols: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[rows.len(), cols]);
    for (i, &j) in rows.iter().enumerate() {
        t.set(i, j, 1.0);
    }
    t
}

fn es(n: usize) -> (KnowledgeBase, crate::AdjacencyStore) {
    let (kb, _) = gen_even_successor(n, 0.0).unwrap();
    let store = build_matrices(&kb, true, true);
    (kb, store)
}

fn all_pairs(n: usize, predicate: usize) -> Vec<Query> {
    (0..n)
        .flat_map(|x| {
            (0..n).map(move |y| Query {
                subject: x,
                predicate,
                object: y,
                label: false,
            })
        })
        .collect()
}

fn leaf(predicate: OpRef, args: Vec<PathAst>) -> Formula {
    Formula::Leaf(StatementAst { predicate, args })
}

fn path(source: PathSource, ops: &[OpRef]) -> PathAst {
    PathAst {
        source,
        ops: ops.to_vec(),
    }
}

/// Bundle for `Even(X) ← Even(φ_Succ(φ_Succ(X)))` with T = 2, L = 1.
fn even_bundle(store: &crate::AdjacencyStore) -> (RuleSpaceConfig, AttentionBundle<f64>) {
    let vocab = store.vocab();
    let (even, succ) = (vocab.id("Even").unwrap(), vocab.id("Succ").unwrap());
    let cfg = RuleSpaceConfig::new(store.len(), 2, 1, 2, 8);
    let mut psi2 = vec![0; cfg.k];
    psi2[even] = 1;
    let b = AttentionBundle {
        s_phi: one_hot(&[succ, succ], cfg.k),
        s_psi: one_hot(&vec![0; cfg.k], cfg.t),
        s_psi2: one_hot(&psi2, cfg.t),
        s_f: Vec::new(),
        s_f2: Vec::new(),
        s_o: one_hot(&[even], cfg.pool_size()),
    };
    (cfg, b)
}

#[test]
fn even_via_two_successor_hops() {
    let (kb, store) = es(7);
    let (cfg, b) = even_bundle(&store);
    let even = kb.predicates.id("Even").unwrap();
    let succ = kb.predicates.id("Succ").unwrap();
    let rule = extract(&b, &cfg, store.vocab(), even).unwrap();
    let want = leaf(
        OpRef::Pred(even),
        vec![path(PathSource::XPrime, &[OpRef::Pred(succ), OpRef::Pred(succ)])],
    );
    assert_eq!(rule.formula, want);
    assert_eq!(
        render_operator_form(&rule, &kb.predicates),
        "Even(X) ← Even(φ_Succ(φ_Succ(X)))"
    );
    assert_eq!(
        render_variable_form(&rule, &kb.predicates),
        "Even(X) ← Succ(X,Y₁) ∧ Succ(Y₁,Y₂) ∧ Even(Y₂)"
    );
    assert_eq!(
        render_ast_form(&rule, &kb.predicates),
        "(rule Even (stmt Even (path X′ Succ Succ)))"
    );
    let prov = rule.provenance.as_ref().unwrap();
    assert_eq!(prov.s_phi, vec![succ, succ]);
    assert_eq!(prov.s_o, even);

    let encoded: AttentionBundle<f64> = encode(&rule, &cfg, store.vocab()).unwrap();
    let qs = all_pairs(kb.num_entities(), even);
    let a = score_queries(&store, &cfg, &b, &qs).unwrap().scores;
    let e = score_queries(&store, &cfg, &encoded, &qs).unwrap().scores;
    assert_eq!(a, e);
}

#[test]
fn soft_bundle_is_rejected() {
    let (_, store) = es(5);
    let cfg = RuleSpaceConfig::new(store.len(), 2, 2, 2, 8);
    let b = AttentionBundle::<f64>::uniform(&cfg);
    assert_eq!(
        extract(&b, &cfg, store.vocab(), 0).unwrap_err(),
        ExtractError::NotHardened
    );
}

#[test]
fn single_level_gives_single_leaf() {
    let (_, store) = es(5);
    for l in [0, 1] {
        let cfg = RuleSpaceConfig::new(store.len(), 2, l, 2, 8);
        let mut rng = seed::rng(l as u64, seed::stream::EVAL, 0);
        let b = harden(&AttentionBundle::<f64>::random(&cfg, &mut rng));
        let rule = extract(&b, &cfg, store.vocab(), 0).unwrap();
        assert!(matches!(rule.formula, Formula::Leaf(_)));
        assert_eq!(rule.formula.depth(), 1);
    }
}

#[test]
fn statement_with_its_own_negation() {
    let (kb, store) = es(9);
    let vocab = store.vocab();
    let (even, succ) = (vocab.id("Even").unwrap(), vocab.id("Succ").unwrap());
    let cfg = RuleSpaceConfig::new(store.len(), 2, 2, 1, 8);
    let (_, mut b) = even_bundle(&store);
    b.s_f = vec![one_hot(&[even], 2 * cfg.k)];
    b.s_f2 = vec![one_hot(&[cfg.k + even], 2 * cfg.k)];
    b.s_o = one_hot(&[cfg.k], cfg.pool_size());
    b.check_shapes(&cfg).unwrap();
    let rule = extract(&b, &cfg, vocab, even).unwrap();
    let psi = leaf(
        OpRef::Pred(even),
        vec![path(PathSource::XPrime, &[OpRef::Pred(succ), OpRef::Pred(succ)])],
    );
    assert_eq!(rule.formula, Formula::and(psi.clone(), Formula::negate(psi)));
    assert_eq!(
        render_operator_form(&rule, &kb.predicates),
        "Even(X) ← Even(φ_Succ(φ_Succ(X))) ∧ ¬Even(φ_Succ(φ_Succ(X)))"
    );
    let qs = all_pairs(kb.num_entities(), even);
    let scores = score_queries(&store, &cfg, &b, &qs).unwrap().scores;
    for (q, s) in qs.iter().zip(scores) {
        let o = grounding_oracle(&rule, &kb, q, &OracleOptions::default()).unwrap();
        assert!(o <= 0.25 + 1e-12);
        assert!((o - s).abs() < 1e-12);
    }
}

/// Unary `Person`, `Car`, `Clothing` and binary `Inside`, `On`.
fn scene_predicates() -> crate::kb::PredicateTable {
    let mut p = crate::kb::PredicateTable::new();
    for name in ["Person", "Car", "Clothing"] {
        p.declare(name, crate::kb::Arity::Unary).unwrap();
    }
    for name in ["Inside", "On"] {
        p.declare(name, crate::kb::Arity::Binary).unwrap();
    }
    p
}

#[test]
fn operator_call_rule_has_the_clause_body() {
    let preds = scene_predicates();
    let rule = parse_operator_form("Person(X) ← Car(φ_Inside(X)) ∧ On(φ_Clothing(), X)", &preds).unwrap();
    let on = OpRef::Pred(preds.id("On").unwrap());
    let clothing = preds.id("Clothing").unwrap();
    let Formula::And(_, b) = &rule.formula else {
        panic!("expected a conjunction");
    };
    assert_eq!(
        **b,
        leaf(
            on,
            vec![path(PathSource::Unary(clothing), &[]), path(PathSource::XPrime, &[])]
        )
    );
    let text = render_variable_form(&rule, &preds);
    let body = text.split_once(render::ARROW).unwrap().1;
    let atoms: HashSet<String> = body
        .split(render::AND)
        .map(|a| a.trim().trim_matches(|c| c == '[' || c == ']').to_string())
        .collect();
    let want: HashSet<String> = ["Inside(X,Y₁)", "Car(Y₁)", "On(Y₂,X)", "Clothing(Y₂)"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(atoms, want);
}

#[test]
fn identity_path_statement() {
    let (kb, store) = es(5);
    let succ = kb.predicates.id("Succ").unwrap();
    let rule = RuleAst::new(
        succ,
        leaf(
            OpRef::Pred(succ),
            vec![path(PathSource::X, &[]), path(PathSource::XPrime, &[])],
        ),
    );
    assert_eq!(render_operator_form(&rule, &kb.predicates), "Succ(X,X′) ← Succ(X,X′)");
    assert_eq!(render_variable_form(&rule, &kb.predicates), "Succ(X,X′) ← Succ(X,X′)");
    let cfg = RuleSpaceConfig::new(store.len(), 1, 1, 1, 8);
    let b: AttentionBundle<f64> = encode(&rule, &cfg, store.vocab()).unwrap();
    assert_eq!(b.s_phi.argmax_rows(), vec![store.vocab().identity().unwrap()]);
    let back = extract(&b, &cfg, store.vocab(), succ).unwrap();
    assert_eq!(back, rule);
}

#[test]
fn oracle_on_toy3() {
    let kb = toy3();
    let succ = kb.predicates.id("Succ").unwrap();
    let even = kb.predicates.id("Even").unwrap();
    let two_hops = [OpRef::Pred(succ), OpRef::Pred(succ)];
    let rule = RuleAst::new(even, leaf(OpRef::Pred(even), vec![path(PathSource::XPrime, &two_hops)]));
    let q = |e| Query {
        subject: e,
        predicate: even,
        object: e,
        label: true,
    };
    let opts = OracleOptions::default();
    // Hops follow facts from subject to object, so e0 reaches e2.
    let v0 = grounding_oracle(&rule, &kb, &q(0), &opts).unwrap();
    assert!((v0 - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    assert!((v0 - 0.7311).abs() < 1e-4);
    assert_eq!(grounding_oracle(&rule, &kb, &q(1), &opts).unwrap(), 0.5);
    let back = [OpRef::Inverse(succ), OpRef::Inverse(succ)];
    let rule_back = RuleAst::new(even, leaf(OpRef::Pred(even), vec![path(PathSource::XPrime, &back)]));
    assert!((grounding_oracle(&rule_back, &kb, &q(2), &opts).unwrap() - v0).abs() < 1e-12);

    let small = OracleOptions {
        limit: 2,
        ..OracleOptions::default()
    };
    assert_eq!(
        grounding_oracle(&rule, &kb, &q(0), &small).unwrap_err(),
        ExtractError::KbTooLarge { entities: 3, limit: 2 }
    );
    assert!(matches!(
        grounding_oracle(&rule, &kb, &q(7), &opts),
        Err(ExtractError::EntityOutOfRange { entity: 7, .. })
    ));
}

fn test_kbs() -> Vec<KnowledgeBase> {
    vec![
        toy3(),
        gen_even_successor(12, 0.0).unwrap().0,
        gen_random_kb(16, 2, 2, 1.5, 3).unwrap(),
    ]
}

/// Hardened random bundles: matrix score, oracle on the extracted rule, and
/// matrix score of the re-encoded rule all agree.
#[test]
fn hard_scores_match_oracle_and_reencoding() {
    for (i, kb) in test_kbs().iter().enumerate() {
        let store = build_matrices(kb, true, true);
        for s in 0..8u64 {
            let mut rng = seed::rng(s, seed::stream::EVAL, i as u64);
            let cfg = RuleSpaceConfig::new(
                store.len(),
                rng.gen_range(1..=3),
                rng.gen_range(0..=2),
                rng.gen_range(1..=4),
                4,
            );
            let b = harden(&AttentionBundle::<f64>::random(&cfg, &mut rng));
            let rule = extract(&b, &cfg, store.vocab(), 0).unwrap();
            let qs = all_pairs(kb.num_entities(), 0);
            let matrix = score_queries(&store, &cfg, &b, &qs).unwrap().scores;
            let encoded: AttentionBundle<f64> = encode(&rule, &cfg, store.vocab()).unwrap();
            let again = score_queries(&store, &cfg, &encoded, &qs).unwrap().scores;
            let oracle = oracle::oracle_scores(&rule, kb, &qs, &OracleOptions::default()).unwrap();
            for j in 0..qs.len() {
                assert!(
                    (matrix[j] - oracle[j]).abs() < 1e-9,
                    "kb {i} seed {s}: {} vs {}",
                    matrix[j],
                    oracle[j]
                );
                assert!((matrix[j] - again[j]).abs() < 1e-12);
            }
            assert_eq!(extract(&encoded, &cfg, store.vocab(), 0).unwrap(), rule);
        }
    }
}

#[test]
fn unencodable_rules() {
    let preds = scene_predicates();
    let vocab = {
        let kb = KnowledgeBase {
            entities: Default::default(),
            predicates: preds.clone(),
            facts: Vec::new(),
        };
        build_matrices(&kb, true, true).vocab().clone()
    };
    let cfg = RuleSpaceConfig::new(vocab.len(), 2, 2, 2, 4);
    let rooted = parse_operator_form("Person(X) ← On(φ_Clothing(),X)", &preds).unwrap();
    assert!(matches!(
        encode::<f64>(&rooted, &cfg, &vocab),
        Err(ExtractError::NotEncodable(_))
    ));
    let forked = parse_operator_form("Person(X) ← On(φ_Inside(X),φ_On(X))", &preds).unwrap();
    assert!(matches!(
        encode::<f64>(&forked, &cfg, &vocab),
        Err(ExtractError::NotEncodable(_))
    ));
    let long = parse_operator_form("Person(X) ← Car(φ_On(φ_On(φ_On(X))))", &preds).unwrap();
    assert!(matches!(
        encode::<f64>(&long, &cfg, &vocab),
        Err(ExtractError::NotEncodable(_))
    ));
}

#[test]
fn parse_errors() {
    let preds = scene_predicates();
    for bad in [
        "Person(X) ← Car(φ_Inside(X)",
        "Person(X) Car(X)",
        "Person(X,X′) ← Car(X)",
        "Person(X) ← Car(X,X)",
        "Person(X) ← Car(φ_Inside(X)) extra",
    ] {
        assert!(
            matches!(parse_operator_form(bad, &preds), Err(ExtractError::Parse { .. })),
            "{bad}"
        );
    }
    assert_eq!(
        parse_operator_form("Person(X) ← Truck(X)", &preds).unwrap_err(),
        ExtractError::UnknownName("Truck".into())
    );
    assert!(parse_variable_form("Person(X) ← Inside(Y₁,Y₂) ∧ Car(Y₂)", &preds).is_err());
    assert!(parse_ast_form("(rule Person (stmt Car (path Z)))", &preds).is_err());
}

fn op_choices(preds: &crate::kb::PredicateTable) -> Vec<OpRef> {
    let mut ops = vec![OpRef::Identity];
    for (id, p) in preds.iter() {
        ops.push(OpRef::Pred(id));
        if p.arity == crate::kb::Arity::Binary {
            ops.push(OpRef::Inverse(id));
        }
    }
    ops
}

fn random_formula(rng: &mut impl Rng, preds: &crate::kb::PredicateTable, unary_head: bool, depth: usize) -> Formula {
    let choice = if depth == 0 { 0 } else { rng.gen_range(0..4) };
    match choice {
        1 => Formula::negate(random_formula(rng, preds, unary_head, depth - 1)),
        2 => {
            let a = random_formula(rng, preds, unary_head, depth - 1);
            Formula::and(a, random_formula(rng, preds, unary_head, depth - 1))
        }
        3 => {
            let a = random_formula(rng, preds, unary_head, depth - 1);
            Formula::and(a.clone(), a)
        }
        _ => {
            let ops = op_choices(preds);
            let predicate = ops[rng.gen_range(0..ops.len())];
            let n = predicate.arity(preds).count();
            let unary: Vec<usize> = preds.unary_ids();
            let args = (0..n)
                .map(|i| {
                    let source = if !unary.is_empty() && rng.gen_bool(0.2) {
                        PathSource::Unary(unary[rng.gen_range(0..unary.len())])
                    } else if unary_head {
                        if n == 2 && i == 0 {
                            PathSource::X
                        } else {
                            PathSource::XPrime
                        }
                    } else if rng.gen_bool(0.5) {
                        PathSource::X
                    } else {
                        PathSource::XPrime
                    };
                    let len = rng.gen_range(0..=3);
                    PathAst {
                        source,
                        ops: (0..len).map(|_| ops[rng.gen_range(0..ops.len())]).collect(),
                    }
                })
                .collect();
            Formula::Leaf(StatementAst { predicate, args })
        }
    }
}

fn random_rule(seed_value: u64, preds: &crate::kb::PredicateTable) -> RuleAst {
    let mut rng = seed::rng(seed_value, seed::stream::EVAL, 9);
    let head = rng.gen_range(0..preds.len());
    let unary_head = preds.is_unary(head);
    RuleAst::new(head, random_formula(&mut rng, preds, unary_head, 3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn text_forms_round_trip(s in any::<u64>()) {
        let kb = gen_random_kb(8, 2, 2, 1.5, s).unwrap();
        let preds = &kb.predicates;
        let rule = random_rule(s, preds);
        let op = render_operator_form(&rule, preds);
        prop_assert_eq!(&parse_operator_form(&op, preds).unwrap(), &rule, "{}", op);
        let ast = render_ast_form(&rule, preds);
        prop_assert_eq!(&parse_ast_form(&ast, preds).unwrap(), &rule, "{}", ast);

        let var = render_variable_form(&rule, preds);
        let back = parse_variable_form(&var, preds).unwrap();
        prop_assert_eq!(&render_variable_form(&back, preds), &var);
        let qs = all_pairs(kb.num_entities(), rule.head);
        let opts = OracleOptions::default();
        let a = oracle::oracle_scores(&rule, &kb, &qs, &opts).unwrap();
        let b = oracle::oracle_scores(&back, &kb, &qs, &opts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for form in [RuleForm::Operator, RuleForm::Variable, RuleForm::Ast] {
            let text = render(&rule, preds, form);
            prop_assert!(parse_rule(&text, form, preds).is_ok());
        }
    }

    #[test]
    fn adding_a_fact_never_lowers_a_statement(s in any::<u64>(), x in 0usize..8, y in 0usize..8, p in 0usize..4) {
        let kb = gen_random_kb(8, 2, 2, 1.5, s).unwrap();
        let mut rule = random_rule(s, &kb.predicates);
        rule.formula = Formula::Leaf(rule.formula.leaves()[0].clone());
        let mut bigger = kb.clone();
        let fact = if kb.predicates.is_unary(p) { Fact::unary(x, p) } else { Fact::new(x, p, y) };
        if !bigger.facts.contains(&fact) {
            bigger.facts.push(fact);
        }
        let qs = all_pairs(kb.num_entities(), rule.head);
        let opts = OracleOptions::default();
        let before = oracle::oracle_scores(&rule, &kb, &qs, &opts).unwrap();
        let after = oracle::oracle_scores(&rule, &bigger, &qs, &opts).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!(b >= a);
        }
    }
}

fn es_holdout() -> (KnowledgeBase, crate::AdjacencyStore, Vec<Query>, KnownFacts) {
    let (full, splits) = gen_even_successor(20, 0.2).unwrap();
    let known = KnownFacts::new(&full.facts);
    let even = full.predicates.id("Even").unwrap();
    let mut kb = full.clone();
    kb.facts = splits.train.clone();
    let store = build_matrices(&kb, true, true);
    let mut qs: Vec<Query> = splits
        .test
        .iter()
        .map(|f| Query {
            subject: f.subject,
            predicate: f.predicate,
            object: f.object,
            label: true,
        })
        .collect();
    qs.extend((1..20).step_by(2).map(|e| Query {
        subject: e,
        predicate: even,
        object: e,
        label: false,
    }));
    (kb, store, qs, known)
}

#[test]
fn ground_truth_rule_classifies_held_out_evens() {
    let (kb, store, qs, known) = es_holdout();
    let preds = &kb.predicates;
    let rules = vec![
        parse_operator_form("Even(X) ← Even(φ_Succ(φ_Succ(X)))", preds).unwrap(),
        parse_operator_form("Zero(X) ← Zero(X)", preds).unwrap(),
    ];
    let cfg = RuleSpaceConfig::new(store.len(), 2, 1, 2, 8);
    let m = evaluate_hard(&rules, &kb, &store, &cfg, &qs, &known, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.oracle_rules, 0);
    assert_eq!(m.ranking.ranks.len(), qs.iter().filter(|q| q.label).count());
    assert!(m.mrr.unwrap() > 0.0);

    let strict = evaluate_hard(&rules, &kb, &store, &cfg, &qs, &known, 0.999).unwrap();
    let negatives = qs.iter().filter(|q| !q.label).count() as f64;
    assert_eq!(strict.accuracy, negatives / qs.len() as f64);

    // The same rule written with a unary root is scored by the oracle.
    let rooted = vec![parse_operator_form("Even(X) ← Even(X) ∧ Zero(φ_Zero())", preds).unwrap()];
    let cfg2 = RuleSpaceConfig::new(store.len(), 2, 2, 2, 8);
    let m2 = evaluate_hard(&rooted, &kb, &store, &cfg2, &qs, &known, DEFAULT_THRESHOLD).unwrap();
    assert_eq!(m2.oracle_rules, 1);
}

#[test]
fn hard_evaluation_errors() {
    let (kb, store, qs, known) = es_holdout();
    let cfg = RuleSpaceConfig::new(store.len(), 2, 1, 2, 8);
    assert_eq!(
        evaluate_hard(&[], &kb, &store, &cfg, &qs, &known, 0.6).unwrap_err(),
        ExtractError::NoRules
    );
    let zero_only = vec![parse_operator_form("Zero(X) ← Zero(X)", &kb.predicates).unwrap()];
    assert_eq!(
        evaluate_hard(&zero_only, &kb, &store, &cfg, &qs, &known, 0.6).unwrap_err(),
        ExtractError::MissingRule("Even".into())
    );
    for t in [0.0, 1.0, f64::NAN] {
        assert!(matches!(
            evaluate_hard(&zero_only, &kb, &store, &cfg, &qs, &known, t),
            Err(ExtractError::Threshold(_))
        ));
    }
}
