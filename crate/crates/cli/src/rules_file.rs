//! Rule files: `# key = value` header lines carrying the rendering form,
//! the rule-space shape and the operator augmentation, then one rule per
//! line.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hilp_core::extractor::{parse_rule, render, RuleForm};
use hilp_core::kb::{AugmentOptions, PredicateTable};
use hilp_core::{RuleAst, RuleSpaceConfig};

pub struct RuleFile {
    pub form: RuleForm,
    pub rule: RuleSpaceConfig,
    pub augment: AugmentOptions,
    pub rules: Vec<RuleAst>,
}

fn form_name(form: RuleForm) -> &'static str {
    match form {
        RuleForm::Operator => "operator",
        RuleForm::Variable => "variable",
        RuleForm::Ast => "ast",
    }
}

pub fn to_text(file: &RuleFile, preds: &PredicateTable) -> String {
    let r = &file.rule;
    let mut out = format!(
        "# form = {}\n# k = {}\n# t = {}\n# l = {}\n# c = {}\n# d = {}\n# temperature = {:?}\n# inverses = {}\n# identity = {}\n",
        form_name(file.form),
        r.k,
        r.t,
        r.l,
        r.c,
        r.d,
        r.temperature,
        file.augment.add_inverses,
        file.augment.add_identity,
    );
    for rule in &file.rules {
        out.push_str(&render(rule, preds, file.form));
        out.push('\n');
    }
    out
}

pub fn read(path: &Path, preds: &PredicateTable) -> Result<RuleFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut header = std::collections::HashMap::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('#') {
            if let Some((k, v)) = h.split_once('=') {
                header.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
            }
        } else if !line.is_empty() {
            lines.push((i + 1, line));
        }
    }
    let origin = path.display();
    let get = |key: &str| -> Result<&(usize, String)> {
        header.get(key).ok_or_else(|| anyhow!("{origin}: header lacks `{key}`"))
    };
    fn value<V: std::str::FromStr>(
        origin: &impl std::fmt::Display,
        key: &str,
        (line, v): &(usize, String),
    ) -> Result<V> {
        v.parse()
            .map_err(|_| anyhow!("{origin}:{line}: bad value `{v}` for `{key}`"))
    }
    let form = match get("form")? {
        (_, f) if f == "operator" => RuleForm::Operator,
        (_, f) if f == "variable" => RuleForm::Variable,
        (_, f) if f == "ast" => RuleForm::Ast,
        (line, f) => bail!("{origin}:{line}: unknown rule form `{f}`"),
    };
    let mut rule = RuleSpaceConfig::new(
        value(&origin, "k", get("k")?)?,
        value(&origin, "t", get("t")?)?,
        value(&origin, "l", get("l")?)?,
        value(&origin, "c", get("c")?)?,
        value(&origin, "d", get("d")?)?,
    );
    rule.temperature = value(&origin, "temperature", get("temperature")?)?;
    let augment = AugmentOptions {
        add_inverses: value(&origin, "inverses", get("inverses")?)?,
        add_identity: value(&origin, "identity", get("identity")?)?,
    };
    let rules = lines
        .into_iter()
        .map(|(line, text)| parse_rule(text, form, preds).map_err(|e| anyhow!("{origin}:{line}: {e}")))
        .collect::<Result<Vec<_>>>()?;
    if rules.is_empty() {
        bail!("{origin}: no rules");
    }
    Ok(RuleFile {
        form,
        rule,
        augment,
        rules,
    })
}
