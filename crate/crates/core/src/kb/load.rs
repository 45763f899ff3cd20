use std::collections::HashSet;
use std::path::Path;

use super::{Arity, EntityTable, Fact, KbError, KnowledgeBase, PredicateTable, Result};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| KbError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| KbError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Parses `name<TAB>arity` lines. Blank lines and `#` comments are skipped.
pub fn parse_meta(text: &str, file: &str) -> Result<PredicateTable> {
    let mut table = PredicateTable::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let malformed = |msg: &str| KbError::Malformed {
            file: file.to_string(),
            line: i + 1,
            msg: msg.to_string(),
        };
        if fields.len() != 2 {
            return Err(malformed("expected `name<TAB>arity`"));
        }
        let arity = fields[1]
            .trim()
            .parse::<usize>()
            .ok()
            .and_then(Arity::from_count)
            .ok_or_else(|| malformed("arity must be 1 or 2"))?;
        table.declare(fields[0].trim(), arity)?;
    }
    Ok(table)
}

enum Entities<'a> {
    Grow(&'a mut EntityTable),
    Fixed(&'a EntityTable),
}

fn parse_rows(text: &str, file: &str, predicates: &PredicateTable, mut entities: Entities<'_>) -> Result<Vec<Fact>> {
    let mut seen = HashSet::new();
    let mut facts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let pname = match fields.len() {
            2 | 3 => fields[1],
            _ => {
                return Err(KbError::Malformed {
                    file: file.to_string(),
                    line: i + 1,
                    msg: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
                })
            }
        };
        let pid = predicates.id(pname).ok_or_else(|| KbError::UnknownPredicate {
            file: file.to_string(),
            line: i + 1,
            name: pname.to_string(),
        })?;
        let declared = predicates.arity(pid);
        if declared.count() + 1 != fields.len() {
            return Err(KbError::ArityMismatch {
                file: file.to_string(),
                line: i + 1,
                name: pname.to_string(),
                declared: declared.count(),
                fields: fields.len(),
            });
        }
        let mut resolve = |name: &str| -> Result<usize> {
            match &mut entities {
                Entities::Grow(t) => Ok(t.intern(name)),
                Entities::Fixed(t) => t.id(name).ok_or_else(|| KbError::UnknownEntity {
                    file: file.to_string(),
                    line: i + 1,
                    name: name.to_string(),
                }),
            }
        };
        let subject = resolve(fields[0])?;
        let object = match declared {
            Arity::Unary => subject,
            Arity::Binary => resolve(fields[2])?,
        };
        let f = Fact::new(subject, pid, object);
        if seen.insert(f) {
            facts.push(f);
        }
    }
    Ok(facts)
}

/// Parses a facts file against a metadata table, growing `entities`.
pub fn parse_facts(
    text: &str,
    file: &str,
    predicates: &PredicateTable,
    entities: &mut EntityTable,
) -> Result<Vec<Fact>> {
    parse_rows(text, file, predicates, Entities::Grow(entities))
}

/// Loads a knowledge base. Entity ids follow first appearance; duplicate
/// facts are dropped.
pub fn load_facts(facts_path: &Path, meta_path: &Path) -> Result<KnowledgeBase> {
    let predicates = parse_meta(&read(meta_path)?, &meta_path.display().to_string())?;
    let mut entities = EntityTable::new();
    let file = facts_path.display().to_string();
    let facts = parse_facts(&read(facts_path)?, &file, &predicates, &mut entities)?;
    if facts.is_empty() {
        return Err(KbError::EmptyKb(file));
    }
    Ok(KnowledgeBase {
        entities,
        predicates,
        facts,
    })
}

/// Loads a split file against an existing knowledge base. Entities not
/// present in the knowledge base are rejected.
pub fn load_split(path: &Path, kb: &KnowledgeBase) -> Result<Vec<Fact>> {
    parse_rows(
        &read(path)?,
        &path.display().to_string(),
        &kb.predicates,
        Entities::Fixed(&kb.entities),
    )
}

/// The base predicates as `name<TAB>arity` lines, readable by [`parse_meta`].
pub fn meta_text(predicates: &PredicateTable) -> String {
    let mut out = String::new();
    for (_, p) in predicates.iter() {
        if p.kind == super::PredicateKind::Base {
            out.push_str(&format!("{}\t{}\n", p.name, p.arity.count()));
        }
    }
    out
}

pub fn write_meta(path: &Path, predicates: &PredicateTable) -> Result<()> {
    write(path, &meta_text(predicates))
}

pub fn write_facts(path: &Path, kb: &KnowledgeBase, facts: &[Fact]) -> Result<()> {
    let mut out = String::new();
    for f in facts {
        let p = kb.predicates.get(f.predicate);
        match p.arity {
            Arity::Unary => out.push_str(&format!("{}\t{}\n", kb.entities.name(f.subject), p.name)),
            Arity::Binary => out.push_str(&format!(
                "{}\t{}\t{}\n",
                kb.entities.name(f.subject),
                p.name,
                kb.entities.name(f.object)
            )),
        }
    }
    write(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> PredicateTable {
        parse_meta("Succ\t2\nEven\t1\n", "meta").unwrap()
    }

    #[test]
    fn binary_rows_parse() {
        let mut e = EntityTable::new();
        let facts = parse_facts("e0\tSucc\te1\ne1\tSucc\te2\n", "f", &meta(), &mut e).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(facts.len(), 2);
        assert_eq!(facts[0], Fact::new(0, 0, 1));
    }

    #[test]
    fn unary_row_is_diagonal() {
        let mut e = EntityTable::new();
        let facts = parse_facts("e0\tEven\n", "f", &meta(), &mut e).unwrap();
        assert_eq!(facts, vec![Fact::new(0, 1, 0)]);
    }

    #[test]
    fn duplicates_dropped() {
        let mut e = EntityTable::new();
        let facts = parse_facts("a\tSucc\tb\na\tSucc\tb\n", "f", &meta(), &mut e).unwrap();
        assert_eq!(facts.len(), 1);
    }

    #[test]
    fn errors_carry_location() {
        let mut e = EntityTable::new();
        let err = parse_facts("a\tPrev\tb\n", "f", &meta(), &mut e).unwrap_err();
        assert!(matches!(err, KbError::UnknownPredicate { line: 1, .. }));
        let err = parse_facts("\na\tEven\tb\n", "f", &meta(), &mut e).unwrap_err();
        assert!(matches!(
            err,
            KbError::ArityMismatch {
                line: 2,
                declared: 1,
                fields: 3,
                ..
            }
        ));
        let err = parse_facts("a\tSucc\n", "f", &meta(), &mut e).unwrap_err();
        assert!(matches!(
            err,
            KbError::ArityMismatch {
                declared: 2,
                fields: 2,
                ..
            }
        ));
    }

    #[test]
    fn bad_meta_rejected() {
        assert!(parse_meta("Succ\t3\n", "m").is_err());
        assert!(parse_meta("Succ\n", "m").is_err());
    }

    #[test]
    fn empty_file_is_empty_kb() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("meta.tsv"), "Succ\t2\n").unwrap();
        std::fs::write(dir.path().join("facts.tsv"), "").unwrap();
        let err = load_facts(&dir.path().join("facts.tsv"), &dir.path().join("meta.tsv"));
        assert!(matches!(err, Err(KbError::EmptyKb(_))));
    }

    #[test]
    fn split_rejects_unknown_entities() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("meta.tsv"), "Succ\t2\n").unwrap();
        std::fs::write(dir.path().join("train.tsv"), "a\tSucc\tb\n").unwrap();
        std::fs::write(dir.path().join("test.tsv"), "b\tSucc\tz\n").unwrap();
        let kb = load_facts(&dir.path().join("train.tsv"), &dir.path().join("meta.tsv")).unwrap();
        let err = load_split(&dir.path().join("test.tsv"), &kb).unwrap_err();
        assert!(matches!(err, KbError::UnknownEntity { .. }));
    }
}
