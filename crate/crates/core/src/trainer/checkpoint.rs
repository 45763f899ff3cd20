//! Parameter checkpoints.
//!
//! Layout (little-endian): the magic `HILPCKPT`, a `u32` format version, a
//! one-byte element type, a length-prefixed UTF-8 header of `key=value`
//! lines, a `u32` tensor count, then per tensor a length-prefixed name, a
//! `u32` rank, `u64` dimensions and raw element bytes. The file ends with
//! the SHA-256 of everything before it.
//!
//! The header carries a digest of the rule-space configuration and the
//! parameter layout; loading against a different configuration fails with
//! [`TrainError::DigestMismatch`].

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Result, TrainError};
use crate::diffmath::{Scalar, Tensor};
use crate::kb::{meta_text, parse_meta, AugmentOptions, PredicateTable};
use crate::rulegen::ModelParams;
use crate::rulespace::RuleSpaceConfig;

const MAGIC: &[u8; 8] = b"HILPCKPT";
const VERSION: u32 = 1;

/// Everything needed to regenerate and name a trained model's rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    /// Base predicates of the knowledge base the model was trained on.
    pub predicates: PredicateTable,
    pub targets: Vec<usize>,
    pub augment: AugmentOptions,
}

/// SHA-256 over the configuration and the parameter names and shapes.
pub fn config_digest<T: Scalar>(params: &ModelParams<T>) -> String {
    let c = &params.cfg;
    let mut h = Sha256::new();
    h.update(format!(
        "k={};t={};l={};c={};d={};tau={:?};",
        c.k, c.t, c.l, c.c, c.d, c.temperature
    ));
    for (name, t) in params.store.iter() {
        h.update(format!("{name}:{:?};", t.shape()));
    }
    hex::encode(h.finalize())
}

fn io_err(path: &Path, e: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let c = &ckpt.params.cfg;
    let targets: Vec<String> = ckpt.targets.iter().map(usize::to_string).collect();
    let mut header = format!(
        "digest={}\nk={}\nt={}\nl={}\nc={}\nd={}\ntemperature={:?}\ninverses={}\nidentity={}\ntargets={}\n",
        config_digest(&ckpt.params),
        c.k,
        c.t,
        c.l,
        c.c,
        c.d,
        c.temperature,
        ckpt.augment.add_inverses,
        ckpt.augment.add_identity,
        targets.join(","),
    );
    for line in meta_text(&ckpt.predicates).lines() {
        header.push_str("pred=");
        header.push_str(line);
        header.push('\n');
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(ckpt.params.store.len() as u32).to_le_bytes());
    for (name, t) in ckpt.params.store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            x.to_le_bytes_vec(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(TrainError::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TrainError::Format("header is not UTF-8".into()))
    }
}

fn header_value<'h>(header: &'h str, key: &str) -> Result<&'h str> {
    header
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| TrainError::Format(format!("header lacks `{key}`")))
}

fn parse_value<V: std::str::FromStr>(header: &str, key: &str) -> Result<V> {
    header_value(header, key)?
        .parse()
        .map_err(|_| TrainError::Format(format!("bad header value for `{key}`")))
}

/// Loads a checkpoint, converting elements to `T` (exact when `T` matches
/// the stored type). With `expected`, the stored configuration must match.
pub fn load_checkpoint<T: Scalar>(path: &Path, expected: Option<&RuleSpaceConfig>) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(TrainError::Format("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(TrainError::DigestMismatch("file contents".into()));
    }
    let mut r = Reader {
        bytes: body,
        at: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(TrainError::Format(format!("unsupported checkpoint version {version}")));
    }
    let dtype = r.take(1)?[0];
    let width = match dtype {
        4 => 4,
        8 => 8,
        other => return Err(TrainError::Format(format!("unknown element type {other}"))),
    };
    let header = r.string()?;
    let mut cfg = RuleSpaceConfig::new(
        parse_value(&header, "k")?,
        parse_value(&header, "t")?,
        parse_value(&header, "l")?,
        parse_value(&header, "c")?,
        parse_value(&header, "d")?,
    );
    cfg.temperature = parse_value(&header, "temperature")?;
    let augment = AugmentOptions {
        add_inverses: parse_value(&header, "inverses")?,
        add_identity: parse_value(&header, "identity")?,
    };
    let targets = header_value(&header, "targets")?;
    let targets: Vec<usize> = if targets.is_empty() {
        Vec::new()
    } else {
        targets
            .split(',')
            .map(|t| t.parse().map_err(|_| TrainError::Format("bad target id".into())))
            .collect::<Result<_>>()?
    };
    let meta: String = header
        .lines()
        .filter_map(|l| l.strip_prefix("pred="))
        .map(|l| format!("{l}\n"))
        .collect();
    let predicates = parse_meta(&meta, &path.display().to_string())?;

    let count = r.u32()? as usize;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        names.push(r.string()?);
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * width)?;
        let data: Vec<T> = raw
            .chunks(width)
            .map(|b| match width {
                4 => T::from_f64(f32::from_le_slice(b) as f64),
                _ => T::from_f64(f64::from_le_slice(b)),
            })
            .collect();
        tensors.push(Tensor::new(&shape, data)?);
    }
    if r.at != body.len() {
        return Err(TrainError::Format("trailing bytes after the last tensor".into()));
    }

    let template = ModelParams::<T>::new(&cfg, 0)?;
    let layout: Vec<&str> = template.store.iter().map(|(n, _)| n).collect();
    if layout != names {
        return Err(TrainError::DigestMismatch("parameter layout".into()));
    }
    let params = template.with_tensors(tensors)?;
    if config_digest(&params) != header_value(&header, "digest")? {
        return Err(TrainError::DigestMismatch("stored configuration".into()));
    }
    if let Some(want) = expected {
        if *want != params.cfg {
            return Err(TrainError::DigestMismatch("rule configuration".into()));
        }
    }
    Ok(Checkpoint {
        params,
        predicates,
        targets,
        augment,
    })
}
