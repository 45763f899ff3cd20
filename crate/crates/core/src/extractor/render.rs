//! Text forms of a rule.
//!
//! *Operator form* nests operator calls: `Even(X) ← Even(φ_Succ(φ_Succ(X)))`.
//! A path rooted at a unary membership set prints as `φ_Clothing()`.
//!
//! *Variable form* names every hop's result with a fresh variable, giving
//! the familiar clause shape `Even(X) ← Succ(X,Y₁) ∧ Succ(Y₁,Y₂) ∧ Even(Y₂)`.
//! Inverse hops print as the base predicate with swapped arguments, and
//! unary operators inside a path filter the current variable without
//! introducing a new one. A statement whose two paths both leave the head
//! meets at its predicate atom, which joins the two path ends:
//! `Near(φ_Succ(X),φ_Succ(X′))` becomes `Succ(X,Y₁) ∧ Succ(X′,Y₂) ∧ Near(Y₁,Y₂)`.
//! When a body holds more than one statement, each statement's atoms are
//! grouped in square brackets so statements stay distinguishable.
//!
//! *AST form* is a nested parenthesized term for machines:
//! `(rule Even (stmt Even (path X′ Succ Succ)))`.
//!
//! In operator and variable form a conjunction of a formula with itself
//! prints once with a `²` mark, since the product `p·p` is kept in scoring.
//! For unary heads `X′` is the same variable as `X` and prints as `X`.

use super::{Formula, OpRef, PathAst, PathSource, RuleAst, StatementAst};
use crate::kb::{Arity, PredicateTable};

/// Which text form to read or write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleForm {
    Operator,
    Variable,
    Ast,
}

pub(crate) const ARROW: &str = "←";
pub(crate) const AND: &str = "∧";
pub(crate) const NOT: &str = "¬";
pub(crate) const SQUARE: &str = "²";

fn head_text(rule: &RuleAst, preds: &PredicateTable) -> String {
    let name = preds.name(rule.head);
    match preds.arity(rule.head) {
        Arity::Unary => format!("{name}(X)"),
        Arity::Binary => format!("{name}(X,X′)"),
    }
}

fn root_text(source: PathSource, unary_head: bool, preds: &PredicateTable) -> String {
    match source {
        PathSource::X => "X".to_string(),
        PathSource::XPrime if unary_head => "X".to_string(),
        PathSource::XPrime => "X′".to_string(),
        PathSource::Unary(u) => format!("φ_{}()", preds.name(u)),
    }
}

/// Shared layout of the boolean structure; `leaf` renders one statement as
/// a self-delimiting unit. `∧` associates to the left and `¬` binds
/// tighter than `∧`.
fn formula_text(f: &Formula, leaf: &mut dyn FnMut(&StatementAst) -> String) -> String {
    match f {
        Formula::Leaf(s) => leaf(s),
        Formula::Not(x) => format!("{NOT}{}", atomic(x, leaf)),
        Formula::And(a, b) if a == b => match a.as_ref() {
            Formula::Not(_) => format!("({}){SQUARE}", formula_text(a, leaf)),
            _ => format!("{}{SQUARE}", atomic(a, leaf)),
        },
        Formula::And(a, b) => {
            let left = match a.as_ref() {
                Formula::And(x, y) if x != y => formula_text(a, leaf),
                _ => atomic(a, leaf),
            };
            format!("{left} {AND} {}", atomic(b, leaf))
        }
    }
}

fn atomic(f: &Formula, leaf: &mut dyn FnMut(&StatementAst) -> String) -> String {
    match f {
        Formula::Leaf(s) => leaf(s),
        Formula::Not(_) => formula_text(f, leaf),
        Formula::And(a, b) if a == b => formula_text(f, leaf),
        Formula::And(..) => format!("({})", formula_text(f, leaf)),
    }
}

pub fn render_operator_form(rule: &RuleAst, preds: &PredicateTable) -> String {
    let unary_head = preds.arity(rule.head) == Arity::Unary;
    let path = |p: &PathAst| {
        let mut t = root_text(p.source, unary_head, preds);
        for op in &p.ops {
            t = format!("φ_{}({t})", op.name(preds));
        }
        t
    };
    let mut leaf = |s: &StatementAst| {
        let args: Vec<String> = s.args.iter().map(path).collect();
        format!("{}({})", s.predicate.name(preds), args.join(","))
    };
    format!(
        "{} {ARROW} {}",
        head_text(rule, preds),
        formula_text(&rule.formula, &mut leaf)
    )
}

fn subscript(n: usize) -> String {
    n.to_string()
        .chars()
        .map(|c| char::from_u32('₀' as u32 + c.to_digit(10).expect("digit")).expect("subscript digit"))
        .collect()
}

/// Atoms of one statement, allocating body variables from `next`.
fn statement_atoms(s: &StatementAst, unary_head: bool, preds: &PredicateTable, next: &mut usize) -> Vec<String> {
    let mut atoms = Vec::new();
    let mut fresh = || {
        *next += 1;
        format!("Y{}", subscript(*next))
    };
    let mut ends = Vec::with_capacity(s.args.len());
    for p in &s.args {
        let mut cur = match p.source {
            PathSource::Unary(u) => {
                let y = fresh();
                atoms.push(format!("{}({y})", preds.name(u)));
                y
            }
            other => root_text(other, unary_head, preds),
        };
        for &op in &p.ops {
            match op {
                OpRef::Pred(q) if preds.arity(q) == Arity::Unary => atoms.push(format!("{}({cur})", preds.name(q))),
                OpRef::Pred(q) => {
                    let y = fresh();
                    atoms.push(format!("{}({cur},{y})", preds.name(q)));
                    cur = y;
                }
                OpRef::Inverse(q) => {
                    let y = fresh();
                    atoms.push(format!("{}({y},{cur})", preds.name(q)));
                    cur = y;
                }
                OpRef::Identity => {
                    let y = fresh();
                    atoms.push(format!("{}({cur},{y})", op.name(preds)));
                    cur = y;
                }
            }
        }
        ends.push(cur);
    }
    atoms.push(format!("{}({})", s.predicate.name(preds), ends.join(",")));
    atoms
}

pub fn render_variable_form(rule: &RuleAst, preds: &PredicateTable) -> String {
    let unary_head = preds.arity(rule.head) == Arity::Unary;
    let mut next = 0;
    let body = match &rule.formula {
        Formula::Leaf(s) => statement_atoms(s, unary_head, preds, &mut next).join(&format!(" {AND} ")),
        f => {
            let mut leaf = |s: &StatementAst| {
                let atoms = statement_atoms(s, unary_head, preds, &mut next);
                format!("[{}]", atoms.join(&format!(" {AND} ")))
            };
            formula_text(f, &mut leaf)
        }
    };
    format!("{} {ARROW} {body}", head_text(rule, preds))
}

fn path_sexpr(p: &PathAst, preds: &PredicateTable) -> String {
    let mut s = String::from("(path ");
    s.push_str(&match p.source {
        PathSource::X => "X".to_string(),
        PathSource::XPrime => "X′".to_string(),
        PathSource::Unary(u) => format!("(root {})", preds.name(u)),
    });
    for op in &p.ops {
        s.push(' ');
        s.push_str(&op.name(preds));
    }
    s.push(')');
    s
}

fn formula_sexpr(f: &Formula, preds: &PredicateTable) -> String {
    match f {
        Formula::Leaf(s) => {
            let args: Vec<String> = s.args.iter().map(|p| path_sexpr(p, preds)).collect();
            format!("(stmt {} {})", s.predicate.name(preds), args.join(" "))
        }
        Formula::Not(x) => format!("(not {})", formula_sexpr(x, preds)),
        Formula::And(a, b) => format!("(and {} {})", formula_sexpr(a, preds), formula_sexpr(b, preds)),
    }
}

pub fn render_ast_form(rule: &RuleAst, preds: &PredicateTable) -> String {
    format!(
        "(rule {} {})",
        preds.name(rule.head),
        formula_sexpr(&rule.formula, preds)
    )
}

pub fn render(rule: &RuleAst, preds: &PredicateTable, form: RuleForm) -> String {
    match form {
        RuleForm::Operator => render_operator_form(rule, preds),
        RuleForm::Variable => render_variable_form(rule, preds),
        RuleForm::Ast => render_ast_form(rule, preds),
    }
}
