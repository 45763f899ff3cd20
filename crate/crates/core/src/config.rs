//! Run configuration files.
//!
//! The format is flat `key = value` text, one pair per line; `#` starts a
//! comment and blank lines are ignored. Unset keys keep their defaults, a
//! repeated key overrides the earlier one, and unknown keys are errors.
//! [`Config::to_text`] writes every key, and parsing its output gives back
//! the same configuration.

use std::path::Path;

use thiserror::Error;

use crate::rulespace::RuleSpaceConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{origin}:{line}: {msg}")]
    Parse { origin: String, line: usize, msg: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {msg}")]
    Value { key: String, value: String, msg: String },
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Rule-space shape plus training options. `K` is not configured: it
/// follows from the knowledge base and the augmentation flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub t: usize,
    pub l: usize,
    pub c: usize,
    pub d: usize,
    pub temperature: f64,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            t: 2,
            l: 1,
            c: 2,
            d: 32,
            temperature: 1.0,
            train: TrainConfig::default(),
        }
    }
}

/// Every key, in the order [`Config::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "t",
    "l",
    "c",
    "d",
    "temperature",
    "batch_size",
    "negatives",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "seed",
    "patience",
    "precision",
    "masks",
    "inverses",
    "identity",
    "eval_every",
    "hard_eval",
    "restarts",
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value.parse().map_err(|e: V::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

impl Config {
    /// Parses `text` on top of the defaults. `origin` names the source in
    /// error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply(text, origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies the pairs of `text` on top of `self`.
    pub fn apply(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Parse {
                origin: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let tr = &mut self.train;
        match key {
            "t" => self.t = parse(key, value)?,
            "l" => self.l = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "batch_size" => tr.batch_size = parse(key, value)?,
            "negatives" => tr.negatives = parse(key, value)?,
            "lr" => tr.lr = parse(key, value)?,
            "beta1" => tr.beta1 = parse(key, value)?,
            "beta2" => tr.beta2 = parse(key, value)?,
            "eps" => tr.eps = parse(key, value)?,
            "epochs" => tr.epochs = parse(key, value)?,
            "seed" => tr.seed = parse(key, value)?,
            "patience" => tr.patience = parse(key, value)?,
            "precision" => tr.precision = parse(key, value)?,
            "masks" => tr.masks = parse(key, value)?,
            "inverses" => tr.add_inverses = parse(key, value)?,
            "identity" => tr.add_identity = parse(key, value)?,
            "eval_every" => tr.eval_every = parse(key, value)?,
            "hard_eval" => tr.hard_eval = parse(key, value)?,
            "restarts" => tr.restarts = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let tr = &self.train;
        match key {
            "t" => self.t.to_string(),
            "l" => self.l.to_string(),
            "c" => self.c.to_string(),
            "d" => self.d.to_string(),
            "temperature" => format!("{:?}", self.temperature),
            "batch_size" => tr.batch_size.to_string(),
            "negatives" => format!("{:?}", tr.negatives),
            "lr" => format!("{:?}", tr.lr),
            "beta1" => format!("{:?}", tr.beta1),
            "beta2" => format!("{:?}", tr.beta2),
            "eps" => format!("{:?}", tr.eps),
            "epochs" => tr.epochs.to_string(),
            "seed" => tr.seed.to_string(),
            "patience" => tr.patience.to_string(),
            "precision" => tr.precision.to_string(),
            "masks" => tr.masks.to_string(),
            "inverses" => tr.add_inverses.to_string(),
            "identity" => tr.add_identity.to_string(),
            "eval_every" => tr.eval_every.to_string(),
            "hard_eval" => tr.hard_eval.to_string(),
            "restarts" => tr.restarts.to_string(),
            _ => unreachable!("KEYS lists only handled keys"),
        }
    }

    /// Every key with its value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    /// The rule-space shape for a vocabulary of `k` operators.
    pub fn rule_config(&self, k: usize) -> RuleSpaceConfig {
        let mut r = RuleSpaceConfig::new(k, self.t, self.l, self.c, self.d);
        r.temperature = self.temperature;
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Precision;

    #[test]
    fn defaults_match_the_small_benchmark_shape() {
        let c = Config::default();
        assert_eq!((c.t, c.l, c.c, c.d), (2, 1, 2, 32));
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn parses_comments_blanks_and_overrides() {
        let text = "# shape\nt = 3\n\nl=2  # two levels\nprecision = f32\nidentity = false\nt = 1\n";
        let c = Config::parse(text, "x.conf").unwrap();
        assert_eq!((c.t, c.l), (1, 2));
        assert_eq!(c.train.precision, Precision::F32);
        assert!(!c.train.add_identity);
        assert_eq!(c.c, 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match Config::parse("t = 2\n\nbogus = 1\n", "a.conf").unwrap_err() {
            ConfigError::Parse { origin, line, msg } => {
                assert_eq!((origin.as_str(), line), ("a.conf", 3));
                assert!(msg.contains("bogus"), "{msg}");
            }
            e => panic!("{e}"),
        }
        assert!(matches!(
            Config::parse("lr 0.1\n", "b").unwrap_err(),
            ConfigError::Parse { line: 1, .. }
        ));
        assert!(matches!(
            Config::parse("x\nd = -4\n", "b").unwrap_err(),
            ConfigError::Parse { line: 1, .. }
        ));
        let e = Config::parse("d = -4\n", "b").unwrap_err().to_string();
        assert!(e.starts_with("b:1:") && e.contains("-4"), "{e}");
    }

    #[test]
    fn text_round_trips() {
        let mut c = Config::default();
        c.set("lr", "0.01").unwrap();
        c.set("negatives", "0.25").unwrap();
        c.set("restarts", "16").unwrap();
        c.set("temperature", "0.5").unwrap();
        let back = Config::parse(&c.to_text(), "round").unwrap();
        assert_eq!(back, c);
        assert_eq!(c.to_text().lines().count(), KEYS.len());
        assert_eq!(c.rule_config(5).temperature, 0.5);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            Config::load(Path::new("/nonexistent/x.conf")),
            Err(ConfigError::Io { .. })
        ));
    }
}
