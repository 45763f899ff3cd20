//! Readers for the three text forms written by [`super::render`].
//!
//! Operator and AST form parse back to the identical rule. Variable form
//! does too, except that a unary filter on a head variable may attach to a
//! different path of the same statement than it did originally; both
//! readings count the same groundings, so the rule's value is unchanged.

use std::collections::HashSet;

use super::render::RuleForm;
use super::{ExtractError, Formula, OpRef, PathAst, PathSource, Result, RuleAst, StatementAst};
use crate::kb::{Arity, PredicateKind, PredicateTable};

const SYMBOLS: &[char] = &['(', ')', ',', '[', ']', '←', '∧', '¬', '²'];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Sym(char),
    Ident(String),
}

fn tokenize(text: &str) -> Vec<(usize, Tok)> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if SYMBOLS.contains(&c) {
            out.push((pos, Tok::Sym(c)));
            chars.next();
        } else {
            let mut word = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_whitespace() || SYMBOLS.contains(&c) {
                    break;
                }
                word.push(c);
                chars.next();
            }
            out.push((pos, Tok::Ident(word)));
        }
    }
    out
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    preds: &'a PredicateTable,
    unary_head: bool,
    /// Body variables already introduced (variable form).
    seen: HashSet<String>,
}

impl<'a> Parser<'a> {
    fn new(text: &str, preds: &'a PredicateTable) -> Self {
        Self {
            toks: tokenize(text),
            at: 0,
            end: text.len(),
            preds,
            unary_head: false,
            seen: HashSet::new(),
        }
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(ExtractError::Parse {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.1)
    }

    fn peek_sym(&self, c: char) -> bool {
        self.peek() == Some(&Tok::Sym(c))
    }

    fn eat(&mut self, c: char) -> bool {
        let hit = self.peek_sym(c);
        if hit {
            self.at += 1;
        }
        hit
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(w)) => {
                let w = w.clone();
                self.at += 1;
                Ok(w)
            }
            _ => self.err("expected a name"),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        if self.peek() == Some(&Tok::Ident(kw.to_string())) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected `{kw}`"))
        }
    }

    fn finish(&self) -> Result<()> {
        if self.at == self.toks.len() {
            Ok(())
        } else {
            self.err("unexpected trailing input")
        }
    }

    fn base_predicate(&self, name: &str) -> Result<usize> {
        match self.preds.id(name) {
            Some(id) if self.preds.get(id).kind == PredicateKind::Base => Ok(id),
            _ => Err(ExtractError::UnknownName(name.to_string())),
        }
    }

    fn op(&self, name: &str) -> Result<OpRef> {
        OpRef::from_name(self.preds, name)
    }

    fn next_op(&mut self) -> Result<OpRef> {
        let name = self.ident()?;
        self.op(&name)
    }

    fn statement(&self, predicate: OpRef, args: Vec<PathAst>) -> Result<StatementAst> {
        if args.len() != predicate.arity(self.preds).count() {
            return self.err(format!(
                "{} takes {} argument(s), got {}",
                predicate.name(self.preds),
                predicate.arity(self.preds).count(),
                args.len()
            ));
        }
        Ok(StatementAst { predicate, args })
    }

    /// `Name(X)` or `Name(X,X′)`.
    fn head(&mut self) -> Result<usize> {
        let name = self.ident()?;
        let head = self.base_predicate(&name)?;
        self.unary_head = self.preds.arity(head) == Arity::Unary;
        self.expect('(')?;
        if self.ident()? != "X" {
            return self.err("head's first variable must be X");
        }
        if !self.unary_head {
            self.expect(',')?;
            if !is_x_prime(&self.ident()?) {
                return self.err("head's second variable must be X′");
            }
        }
        self.expect(')')?;
        self.expect('←')?;
        Ok(head)
    }

    fn root_source(&self, word: &str) -> Option<PathSource> {
        match word {
            "X" => Some(PathSource::X),
            w if is_x_prime(w) && !self.unary_head => Some(PathSource::XPrime),
            _ => None,
        }
    }

    /// Left-associated `∧` over `¬`-prefixed, optionally squared units.
    fn formula(&mut self, leaf: &mut dyn FnMut(&mut Self) -> Result<Formula>) -> Result<Formula> {
        let mut f = self.negation(leaf)?;
        while self.eat('∧') {
            let rhs = self.negation(leaf)?;
            f = Formula::and(f, rhs);
        }
        Ok(f)
    }

    fn negation(&mut self, leaf: &mut dyn FnMut(&mut Self) -> Result<Formula>) -> Result<Formula> {
        if self.eat('¬') {
            return Ok(Formula::negate(self.negation(leaf)?));
        }
        let mut f = if self.eat('(') {
            let inner = self.formula(leaf)?;
            self.expect(')')?;
            inner
        } else {
            leaf(self)?
        };
        while self.eat('²') {
            f = Formula::and(f.clone(), f);
        }
        Ok(f)
    }

    // Operator form.

    fn term(&mut self) -> Result<PathAst> {
        let word = self.ident()?;
        if let Some(source) = self.root_source(&word) {
            return Ok(PathAst {
                source,
                ops: Vec::new(),
            });
        }
        let Some(name) = word.strip_prefix("φ_") else {
            return self.err(format!("`{word}` is neither a head variable nor an operator call"));
        };
        self.expect('(')?;
        if self.eat(')') {
            let u = self.base_predicate(name)?;
            if self.preds.arity(u) != Arity::Unary {
                return self.err(format!("root {name} must be a unary predicate"));
            }
            return Ok(PathAst {
                source: PathSource::Unary(u),
                ops: Vec::new(),
            });
        }
        let op = self.op(name)?;
        let mut inner = self.term()?;
        self.expect(')')?;
        inner.ops.push(op);
        Ok(inner)
    }

    fn operator_leaf(&mut self) -> Result<Formula> {
        let predicate = self.next_op()?;
        self.expect('(')?;
        let mut args = vec![self.term()?];
        while self.eat(',') {
            args.push(self.term()?);
        }
        self.expect(')')?;
        Ok(Formula::Leaf(self.statement(predicate, args)?))
    }

    // Variable form.

    fn atom(&mut self) -> Result<(usize, String, Vec<String>)> {
        let pos = self.pos();
        let name = self.ident()?;
        self.expect('(')?;
        let mut vars = vec![self.ident()?];
        while self.eat(',') {
            vars.push(self.ident()?);
        }
        self.expect(')')?;
        Ok((pos, name, vars))
    }

    fn atoms(&mut self) -> Result<Vec<(usize, String, Vec<String>)>> {
        let mut out = vec![self.atom()?];
        while self.eat('∧') {
            out.push(self.atom()?);
        }
        Ok(out)
    }

    fn fresh(&mut self, var: &str) -> bool {
        self.root_source(var).is_none() && self.seen.insert(var.to_string())
    }

    /// Rebuilds a statement from its atoms: every atom but the last extends
    /// the current path or starts a new one; the last names the statement.
    fn variable_leaf(&mut self, atoms: Vec<(usize, String, Vec<String>)>) -> Result<Formula> {
        let fail = |pos: usize, msg: String| ExtractError::Parse { pos, msg };
        let (last, hops) = atoms.split_last().expect("at least one atom");
        // Open paths with the variable each currently ends at.
        let mut paths: Vec<(PathAst, String)> = Vec::new();
        for (pos, name, vars) in hops {
            let pos = *pos;
            let op = self.op(name)?;
            let cur = paths.last().map(|p| p.1.clone());
            match (op, vars.as_slice()) {
                (OpRef::Pred(u), [v]) if self.preds.arity(u) == Arity::Unary => {
                    if cur.as_deref() == Some(v) {
                        paths.last_mut().expect("open path").0.ops.push(op);
                    } else if let Some(source) = self.root_source(v) {
                        paths.push((PathAst { source, ops: vec![op] }, v.clone()));
                    } else if self.fresh(v) {
                        let path = PathAst {
                            source: PathSource::Unary(u),
                            ops: Vec::new(),
                        };
                        paths.push((path, v.clone()));
                    } else {
                        return Err(fail(pos, format!("`{v}` does not continue any path")));
                    }
                }
                (_, [a, b]) if op.arity(self.preds) == Arity::Binary => {
                    let (step, next) = if cur.as_deref() == Some(a) && self.fresh(b) {
                        (op, b)
                    } else if cur.as_deref() == Some(b) && self.fresh(a) {
                        (op.inverse(), a)
                    } else if self.root_source(a).is_some() && self.fresh(b) {
                        let source = self.root_source(a).expect("root variable");
                        paths.push((
                            PathAst {
                                source,
                                ops: Vec::new(),
                            },
                            a.clone(),
                        ));
                        (op, b)
                    } else if self.root_source(b).is_some() && self.fresh(a) {
                        let source = self.root_source(b).expect("root variable");
                        paths.push((
                            PathAst {
                                source,
                                ops: Vec::new(),
                            },
                            b.clone(),
                        ));
                        (op.inverse(), a)
                    } else {
                        return Err(fail(pos, format!("{name}({a},{b}) does not continue any path")));
                    };
                    let open = paths.last_mut().expect("open path");
                    open.0.ops.push(step);
                    open.1 = next.clone();
                }
                _ => return Err(fail(pos, format!("wrong number of arguments for {name}"))),
            }
        }
        let (pos, name, vars) = last;
        let predicate = self.op(name)?;
        let mut used = vec![false; paths.len()];
        let mut args = Vec::with_capacity(vars.len());
        for v in vars {
            let hit = (0..paths.len()).find(|&i| !used[i] && paths[i].1 == *v);
            match (hit, self.root_source(v)) {
                (Some(i), _) => {
                    used[i] = true;
                    args.push(paths[i].0.clone());
                }
                (None, Some(source)) => args.push(PathAst {
                    source,
                    ops: Vec::new(),
                }),
                (None, None) => return Err(fail(*pos, format!("`{v}` is not the end of any path"))),
            }
        }
        if used.iter().any(|u| !u) {
            return Err(fail(*pos, "a path does not reach the statement atom".to_string()));
        }
        Ok(Formula::Leaf(self.statement(predicate, args)?))
    }

    // AST form.

    fn sexpr_formula(&mut self) -> Result<Formula> {
        self.expect('(')?;
        let word = self.ident()?;
        let f = match word.as_str() {
            "stmt" => {
                let predicate = self.next_op()?;
                let mut args = Vec::new();
                while self.peek_sym('(') {
                    args.push(self.sexpr_path()?);
                }
                Formula::Leaf(self.statement(predicate, args)?)
            }
            "not" => Formula::negate(self.sexpr_formula()?),
            "and" => {
                let a = self.sexpr_formula()?;
                Formula::and(a, self.sexpr_formula()?)
            }
            other => return self.err(format!("unknown form `{other}`")),
        };
        self.expect(')')?;
        Ok(f)
    }

    fn sexpr_path(&mut self) -> Result<PathAst> {
        self.expect('(')?;
        self.keyword("path")?;
        let source = if self.eat('(') {
            self.keyword("root")?;
            let name = self.ident()?;
            let u = self.base_predicate(&name)?;
            if self.preds.arity(u) != Arity::Unary {
                return self.err(format!("root {name} must be a unary predicate"));
            }
            self.expect(')')?;
            PathSource::Unary(u)
        } else {
            match self.ident()?.as_str() {
                "X" => PathSource::X,
                w if is_x_prime(w) => PathSource::XPrime,
                other => return self.err(format!("unknown path source `{other}`")),
            }
        };
        let mut ops = Vec::new();
        while !self.peek_sym(')') {
            ops.push(self.next_op()?);
        }
        self.expect(')')?;
        Ok(PathAst { source, ops })
    }
}

fn is_x_prime(w: &str) -> bool {
    w == "X′" || w == "X'"
}

/// In text a unary head has the single variable `X`; the rule space feeds a
/// binary statement's paths from `X` and `X′` in order and a unary
/// statement's path from `X′`.
fn positional_sources(f: &mut Formula) {
    match f {
        Formula::Leaf(s) => {
            let n = s.args.len();
            for (i, p) in s.args.iter_mut().enumerate() {
                if matches!(p.source, PathSource::X | PathSource::XPrime) {
                    p.source = if n == 2 && i == 0 {
                        PathSource::X
                    } else {
                        PathSource::XPrime
                    };
                }
            }
        }
        Formula::Not(x) => positional_sources(x),
        Formula::And(a, b) => {
            positional_sources(a);
            positional_sources(b);
        }
    }
}

pub fn parse_operator_form(text: &str, preds: &PredicateTable) -> Result<RuleAst> {
    let mut p = Parser::new(text, preds);
    let head = p.head()?;
    let mut formula = p.formula(&mut |p| p.operator_leaf())?;
    p.finish()?;
    if p.unary_head {
        positional_sources(&mut formula);
    }
    Ok(RuleAst::new(head, formula))
}

pub fn parse_variable_form(text: &str, preds: &PredicateTable) -> Result<RuleAst> {
    let mut p = Parser::new(text, preds);
    let head = p.head()?;
    let bracketed = p.toks[p.at..].iter().any(|t| t.1 == Tok::Sym('['));
    let mut formula = if bracketed {
        p.formula(&mut |p| {
            p.expect('[')?;
            let atoms = p.atoms()?;
            p.expect(']')?;
            p.variable_leaf(atoms)
        })?
    } else {
        let atoms = p.atoms()?;
        p.variable_leaf(atoms)?
    };
    p.finish()?;
    if p.unary_head {
        positional_sources(&mut formula);
    }
    Ok(RuleAst::new(head, formula))
}

pub fn parse_ast_form(text: &str, preds: &PredicateTable) -> Result<RuleAst> {
    let mut p = Parser::new(text, preds);
    p.expect('(')?;
    p.keyword("rule")?;
    let name = p.ident()?;
    let head = p.base_predicate(&name)?;
    let formula = p.sexpr_formula()?;
    p.expect(')')?;
    p.finish()?;
    Ok(RuleAst::new(head, formula))
}

pub fn parse_rule(text: &str, form: RuleForm, preds: &PredicateTable) -> Result<RuleAst> {
    match form {
        RuleForm::Operator => parse_operator_form(text, preds),
        RuleForm::Variable => parse_variable_form(text, preds),
        RuleForm::Ast => parse_ast_form(text, preds),
    }
}
