//! Transformer building blocks on top of [`Graph`].
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`]; running a layer takes the
//! vars produced by [`ParamStore::bind`].

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Graph, ParamId, ParamStore, Result, Scalar, Tensor, TensorError, Var};

/// Uniform in `±1/√fan_in`, the projection initializer.
pub fn init_uniform<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor<T> {
    let a = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::from_f64(rng.gen_range(-a..=a))).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Standard normal, the embedding initializer.
pub fn init_embedding<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn row<T: Scalar>(cols: usize, x: f64) -> Tensor<T> {
    Tensor::filled(&[1, cols], T::from_f64(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, fan_in: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: ps.add(format!("{name}.w"), init_uniform(rng, fan_in, out, fan_in)),
            b: ps.add(format!("{name}.b"), row(out, 0.0)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.affine(x, p[self.w.0], p[self.b.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gain: ps.add(format!("{name}.gain"), row(d, 1.0)),
            bias: ps.add(format!("{name}.bias"), row(d, 0.0)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gain.0], p[self.bias.0])
    }
}

/// Position-wise `ReLU(x W₁ + b₁) W₂ + b₂` with hidden width `2d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            inner: Linear::new(ps, &format!("{name}.inner"), d, 2 * d, rng),
            outer: Linear::new(ps, &format!("{name}.outer"), 2 * d, d, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = self.inner.forward(g, p, x)?;
        let h = g.relu(h)?;
        self.outer.forward(g, p, h)
    }
}

/// Bias-free query/key/value/output projections of one multi-head layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhaWeights {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl MhaWeights {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(TensorError::HeadDivisibility { width: d, heads });
        }
        let mut proj = |suffix: &str| ps.add(format!("{name}.{suffix}"), init_uniform(rng, d, d, d));
        Ok(Self {
            wq: proj("wq"),
            wk: proj("wk"),
            wv: proj("wv"),
            wo: proj("wo"),
            heads,
        })
    }
}

/// Scaled dot-product multi-head attention of queries `q` (`m × d`) over
/// inputs `v` (`n × d`). Returns the projected output (`m × d`) and the
/// head-averaged attention (`m × n`, rows stochastic).
pub fn mha<T: Scalar>(g: &mut Graph<T>, p: &[Var], w: &MhaWeights, q: Var, v: Var) -> Result<(Var, Var)> {
    let d = g.value(q).cols();
    if g.value(v).cols() != d {
        return Err(TensorError::ShapeMismatch {
            op: "mha",
            left: g.value(q).shape().to_vec(),
            right: g.value(v).shape().to_vec(),
        });
    }
    if w.heads == 0 || !d.is_multiple_of(w.heads) {
        return Err(TensorError::HeadDivisibility {
            width: d,
            heads: w.heads,
        });
    }
    let dh = d / w.heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let qp = g.matmul(q, p[w.wq.0])?;
    let kp = g.matmul(v, p[w.wk.0])?;
    let vp = g.matmul(v, p[w.wv.0])?;
    let mut outs: Option<Var> = None;
    let mut att_sum: Option<Var> = None;
    for h in 0..w.heads {
        let (qh, kh, vh) = if w.heads == 1 {
            (qp, kp, vp)
        } else {
            (
                g.slice_cols(qp, h * dh, dh)?,
                g.slice_cols(kp, h * dh, dh)?,
                g.slice_cols(vp, h * dh, dh)?,
            )
        };
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let att = g.softmax_rows(scores)?;
        let oh = g.matmul(att, vh)?;
        outs = Some(match outs {
            None => oh,
            Some(acc) => g.concat(acc, oh, 1)?,
        });
        att_sum = Some(match att_sum {
            None => att,
            Some(acc) => g.add(acc, att)?,
        });
    }
    let o = g.matmul(outs.expect("heads ≥ 1"), p[w.wo.0])?;
    let s = att_sum.expect("heads ≥ 1");
    let s = if w.heads == 1 { s } else { g.row_normalize(s)? };
    Ok((o, s))
}

/// The `Attn(Q, V) → (O, S)` module: a pre-norm encoder layer over `V`,
/// a 4-head decoder cross-attention layer from `Q`, and a final 1-head
/// cross-attention layer whose attention is returned as `S`. Residual
/// connections around every sublayer; no dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct Attn {
    enc_norm: LayerNorm,
    enc_self: MhaWeights,
    enc_ffn_norm: LayerNorm,
    enc_ffn: FeedForward,
    enc_out_norm: LayerNorm,
    dec_norm: LayerNorm,
    dec_cross: MhaWeights,
    dec_ffn_norm: LayerNorm,
    dec_ffn: FeedForward,
    fin_norm: LayerNorm,
    fin_cross: MhaWeights,
    fin_ffn_norm: LayerNorm,
    fin_ffn: FeedForward,
}

/// Heads of the two multi-head layers of an [`Attn`].
pub const ATTN_HEADS: usize = 4;

impl Attn {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let n = |s: &str| format!("{name}.{s}");
        Ok(Self {
            enc_norm: LayerNorm::new(ps, &n("enc.norm"), d),
            enc_self: MhaWeights::new(ps, &n("enc.self"), d, ATTN_HEADS, rng)?,
            enc_ffn_norm: LayerNorm::new(ps, &n("enc.ffn_norm"), d),
            enc_ffn: FeedForward::new(ps, &n("enc.ffn"), d, rng),
            enc_out_norm: LayerNorm::new(ps, &n("enc.out_norm"), d),
            dec_norm: LayerNorm::new(ps, &n("dec.norm"), d),
            dec_cross: MhaWeights::new(ps, &n("dec.cross"), d, ATTN_HEADS, rng)?,
            dec_ffn_norm: LayerNorm::new(ps, &n("dec.ffn_norm"), d),
            dec_ffn: FeedForward::new(ps, &n("dec.ffn"), d, rng),
            fin_norm: LayerNorm::new(ps, &n("fin.norm"), d),
            fin_cross: MhaWeights::new(ps, &n("fin.cross"), d, 1, rng)?,
            fin_ffn_norm: LayerNorm::new(ps, &n("fin.ffn_norm"), d),
            fin_ffn: FeedForward::new(ps, &n("fin.ffn"), d, rng),
        })
    }

    /// Head count of each attention layer, in evaluation order.
    pub fn layer_heads(&self) -> [usize; 3] {
        [self.enc_self.heads, self.dec_cross.heads, self.fin_cross.heads]
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], q: Var, v: Var) -> Result<(Var, Var)> {
        // Encoder over the inputs.
        let x = self.enc_norm.forward(g, p, v)?;
        let (a, _) = mha(g, p, &self.enc_self, x, x)?;
        let x = g.add(v, a)?;
        let h = self.enc_ffn_norm.forward(g, p, x)?;
        let h = self.enc_ffn.forward(g, p, h)?;
        let x = g.add(x, h)?;
        let memory = self.enc_out_norm.forward(g, p, x)?;

        // Decoder from the queries.
        let y = self.dec_norm.forward(g, p, q)?;
        let (a, _) = mha(g, p, &self.dec_cross, y, memory)?;
        let y = g.add(q, a)?;
        let h = self.dec_ffn_norm.forward(g, p, y)?;
        let h = self.dec_ffn.forward(g, p, h)?;
        let y = g.add(y, h)?;

        let z = self.fin_norm.forward(g, p, y)?;
        let (a, s) = mha(g, p, &self.fin_cross, z, memory)?;
        let o = g.add(y, a)?;
        let h = self.fin_ffn_norm.forward(g, p, o)?;
        let h = self.fin_ffn.forward(g, p, h)?;
        let o = g.add(o, h)?;
        Ok((o, s))
    }
}
