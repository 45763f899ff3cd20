use std::sync::Arc;

use super::tensor::softmax_rows;
use super::{cross_entropy, sigmoid, Result, Scalar, Tensor, TensorError, LOG_EPS};
use crate::kb::SparseBoolMatrix;

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written adjoint.
///
/// `forward` runs once when the op is recorded and may cache whatever its
/// `backward` needs. `backward` returns one gradient per input, `None` for
/// inputs it does not differentiate.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;
    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    RowNormalize(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    Concat(Var, Var, usize),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    RepeatRows(Var),
    Transpose(Var),
    Spmv {
        m: Arc<SparseBoolMatrix>,
        v: Var,
        transpose: bool,
    },
    CrossEntropy(Var, Vec<T>),
    Mean(Var),
    Sum(Var),
    Custom(Box<dyn CustomOp<T>>, Vec<Var>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Some ancestor (or the node itself) requires a gradient.
    tracked: bool,
}

/// A recording tape of tensor operations.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every tracked node.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`. Present for every leaf that requires a gradient
    /// (zero when the loss does not depend on it) and for every tracked
    /// intermediate the loss depends on.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn mismatch<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name.to_string()));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value,
            op,
            requires_grad: false,
            tracked,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        assert!(value.is_finite(), "non-finite leaf");
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            tracked: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul", &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_bt(self.value(b))?;
        self.push(out, Op::MatMulBt(a, b), "matmul_bt", &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add", &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub", &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul", &[a, b])
    }

    /// Adds the single row `r` to every row of `x`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(r));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(mismatch("add_row", xv, rv));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, r), "add_row", &[x, r])
    }

    /// `x · W + b` with `b` a single row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), "scale", &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), "relu", &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), "sigmoid", &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x), "softmax_rows", &[x])
    }

    /// Divides each row by its sum. Rows must have positive sums.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let s = row.iter().fold(T::zero(), |a, &b| a + b);
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(out, Op::RowNormalize(x), "row_normalize", &[x])
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// the row vectors `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != xv.cols() || bv.len() != xv.cols() {
            return Err(mismatch("layer_norm", xv, gv));
        }
        let c = xv.cols();
        let cn = T::from_usize(c);
        let mut xhat = xv.clone();
        let mut rstd = Vec::with_capacity(xv.rows());
        let mut out = xv.clone();
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) / cn;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / cn;
            let r = T::one() / (var + T::from_f64(LN_EPS)).sqrt();
            rstd.push(r);
            for j in 0..c {
                let h = (row[j] - mean) * r;
                xhat.set(i, j, h);
                out.set(i, j, h * gv.data()[j] + bv.data()[j]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            "layer_norm",
            &[x, gain, bias],
        )
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).concat(self.value(b), axis)?;
        self.push(out, Op::Concat(a, b, axis), "concat", &[a, b])
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(TensorError::Invalid(format!(
                "slice_rows {start}+{len} exceeds {} rows",
                xv.rows()
            )));
        }
        let c = xv.cols();
        let out = Tensor::matrix(len, c, xv.data()[start * c..(start + len) * c].to_vec())?;
        self.push(out, Op::SliceRows(x, start), "slice_rows", &[x])
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(TensorError::Invalid(format!(
                "slice_cols {start}+{len} exceeds {} cols",
                xv.cols()
            )));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for i in 0..xv.rows() {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let out = Tensor::matrix(xv.rows(), len, data)?;
        self.push(out, Op::SliceCols(x, start), "slice_cols", &[x])
    }

    /// Stacks `n` copies of a single row.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != 1 {
            return Err(TensorError::Invalid("repeat_rows expects one row".into()));
        }
        let mut data = Vec::with_capacity(n * xv.len());
        for _ in 0..n {
            data.extend_from_slice(xv.data());
        }
        let out = Tensor::matrix(n, xv.cols(), data)?;
        self.push(out, Op::RepeatRows(x), "repeat_rows", &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x), "transpose", &[x])
    }

    /// Product of a constant sparse boolean matrix with `v`, where `v` is an
    /// entity vector or an `|X| × b` block of column vectors. With
    /// `transpose` the product is `Mᵀ v`.
    pub fn spmv_const(&mut self, m: Arc<SparseBoolMatrix>, v: Var, transpose: bool) -> Result<Var> {
        let vv = self.value(v);
        let b = if vv.shape().len() == 1 { 1 } else { vv.cols() };
        if vv.len() != m.dim() * b {
            return Err(TensorError::ShapeMismatch {
                op: "spmv_const",
                left: vec![m.dim(), m.dim()],
                right: vv.shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(vv.shape());
        m.apply_batch_into(vv.data(), out.data_mut(), b, transpose);
        self.push(out, Op::Spmv { m, v, transpose }, "spmv_const", &[v])
    }

    /// Mean binary cross-entropy of probabilities `p` against `labels`.
    pub fn cross_entropy(&mut self, p: Var, labels: &[T]) -> Result<Var> {
        let pv = self.value(p);
        if pv.len() != labels.len() || labels.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: pv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let n = T::from_usize(labels.len());
        let total = pv
            .data()
            .iter()
            .zip(labels)
            .fold(T::zero(), |a, (&p, &y)| a + cross_entropy(y, p));
        let out = Tensor::scalar(total / n);
        self.push(out, Op::CrossEntropy(p, labels.to_vec()), "cross_entropy", &[p])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum() / T::from_usize(xv.len()));
        self.push(out, Op::Mean(x), "mean", &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), "sum", &[x])
    }

    pub fn custom(&mut self, mut op: Box<dyn CustomOp<T>>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?;
        let name = op.name();
        self.push(out, Op::Custom(op, inputs.to_vec()), name, inputs)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        let node = &self.nodes[v.0];
        if !node.tracked {
            return Ok(());
        }
        let g = g.reshape(node.value.shape())?;
        accumulate(&mut grads[v.0], g);
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                self.send(grads, *a, g.matmul_bt(val(*b))?)?;
                self.send(grads, *b, val(*a).matmul_at(g)?)?;
            }
            Op::MatMulBt(a, b) => {
                self.send(grads, *a, g.matmul(val(*b))?)?;
                self.send(grads, *b, g.matmul_at(val(*a))?)?;
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone())?;
                self.send(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone())?;
                self.send(grads, *b, g.map(|x| -x))?;
            }
            Op::Mul(a, b) => {
                self.send(grads, *a, g.zip_map(val(*b), "mul", |x, y| x * y)?)?;
                self.send(grads, *b, g.zip_map(val(*a), "mul", |x, y| x * y)?)?;
            }
            Op::AddRow(x, r) => {
                self.send(grads, *x, g.clone())?;
                let mut gr = vec![T::zero(); g.cols()];
                for i in 0..g.rows() {
                    for (a, &b) in gr.iter_mut().zip(g.row(i)) {
                        *a += b;
                    }
                }
                self.send(grads, *r, Tensor::vector(gr))?;
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.send(grads, *x, g.map(|v| v * c))?;
            }
            Op::Relu(x) => {
                let gx = g.zip_map(val(*x), "relu", |d, v| if v > T::zero() { d } else { T::zero() })?;
                self.send(grads, *x, gx)?;
            }
            Op::Sigmoid(x) => {
                let gx = g.zip_map(&node.value, "sigmoid", |d, s| d * s * (T::one() - s))?;
                self.send(grads, *x, gx)?;
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = g.clone();
                for i in 0..y.rows() {
                    let dot = g.row(i).iter().zip(y.row(i)).fold(T::zero(), |a, (&d, &s)| a + d * s);
                    for (o, &s) in gx.row_mut(i).iter_mut().zip(y.row(i)) {
                        *o = s * (*o - dot);
                    }
                }
                self.send(grads, *x, gx)?;
            }
            Op::RowNormalize(x) => {
                let (xv, y) = (val(*x), &node.value);
                let mut gx = g.clone();
                for i in 0..y.rows() {
                    let s = xv.row(i).iter().fold(T::zero(), |a, &b| a + b);
                    let dot = g.row(i).iter().zip(y.row(i)).fold(T::zero(), |a, (&d, &v)| a + d * v);
                    for o in gx.row_mut(i).iter_mut() {
                        *o = (*o - dot) / s;
                    }
                }
                self.send(grads, *x, gx)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = val(*gain);
                let c = xhat.cols();
                let cn = T::from_usize(c);
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                let mut dx = Tensor::zeros(xhat.shape());
                for i in 0..xhat.rows() {
                    let (gr, hr) = (g.row(i), xhat.row(i));
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..c {
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                        let dh = gr[j] * gv.data()[j];
                        m1 += dh;
                        m2 += dh * hr[j];
                    }
                    m1 /= cn;
                    m2 /= cn;
                    let out = dx.row_mut(i);
                    for j in 0..c {
                        let dh = gr[j] * gv.data()[j];
                        out[j] = rstd[i] * (dh - m1 - hr[j] * m2);
                    }
                }
                self.send(grads, *x, dx)?;
                self.send(grads, *gain, Tensor::vector(dg))?;
                self.send(grads, *bias, Tensor::vector(db))?;
            }
            Op::Concat(a, b, axis) => {
                let (av, bv) = (val(*a), val(*b));
                if av.shape().len() == 1 || *axis == 0 {
                    let n = av.len();
                    self.send(grads, *a, Tensor::vector(g.data()[..n].to_vec()))?;
                    self.send(grads, *b, Tensor::vector(g.data()[n..].to_vec()))?;
                } else {
                    let (ca, cb) = (av.cols(), bv.cols());
                    let mut ga = Vec::with_capacity(av.len());
                    let mut gb = Vec::with_capacity(bv.len());
                    for i in 0..g.rows() {
                        ga.extend_from_slice(&g.row(i)[..ca]);
                        gb.extend_from_slice(&g.row(i)[ca..ca + cb]);
                    }
                    self.send(grads, *a, Tensor::vector(ga))?;
                    self.send(grads, *b, Tensor::vector(gb))?;
                }
            }
            Op::SliceRows(x, start) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.shape());
                let c = xv.cols();
                gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.send(grads, *x, gx)?;
            }
            Op::SliceCols(x, start) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.shape());
                let w = g.cols();
                for i in 0..g.rows() {
                    gx.row_mut(i)[*start..start + w].copy_from_slice(g.row(i));
                }
                self.send(grads, *x, gx)?;
            }
            Op::RepeatRows(x) => {
                let mut gx = vec![T::zero(); g.cols()];
                for i in 0..g.rows() {
                    for (a, &b) in gx.iter_mut().zip(g.row(i)) {
                        *a += b;
                    }
                }
                self.send(grads, *x, Tensor::vector(gx))?;
            }
            Op::Transpose(x) => {
                self.send(grads, *x, g.transpose())?;
            }
            Op::Spmv { m, v, transpose } => {
                let b = if g.shape().len() == 1 { 1 } else { g.cols() };
                let mut gv = Tensor::zeros(g.shape());
                m.apply_batch_into(g.data(), gv.data_mut(), b, !transpose);
                self.send(grads, *v, gv)?;
            }
            Op::CrossEntropy(p, labels) => {
                let pv = val(*p);
                let n = T::from_usize(labels.len());
                let eps = T::from_f64(LOG_EPS);
                let d = g.item();
                let gp: Vec<T> = pv
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| d * (-y / (p + eps) + (T::one() - y) / (T::one() - p + eps)) / n)
                    .collect();
                self.send(grads, *p, Tensor::vector(gp))?;
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let d = g.item() / T::from_usize(xv.len());
                self.send(grads, *x, Tensor::filled(xv.shape(), d))?;
            }
            Op::Sum(x) => {
                self.send(grads, *x, Tensor::filled(val(*x).shape(), g.item()))?;
            }
            Op::Custom(op, inputs) => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let gs = op.backward(&values, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return Err(TensorError::Invalid(format!(
                        "{}: backward returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        if !gi.is_finite() {
                            return Err(TensorError::NonFinite(format!("{} backward", op.name())));
                        }
                        self.send(grads, *v, gi)?;
                    }
                }
            }
        }
        Ok(())
    }
}
