//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value, and [`Graph::backward`] walks the tape in reverse. Sparse
//! adjacency matrices enter only as constants (`spmv_const`), so gradients
//! never flow into the knowledge base. Work that is too bulky for the tape,
//! like the rule-space evaluator, plugs in through [`CustomOp`] with a
//! hand-written adjoint.

mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod tensor;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use thiserror::Error;

pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

/// Clamp inside the logarithms of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("width {width} is not divisible by {heads} heads")]
    HeadDivisibility { width: usize, heads: usize },
    #[error("{0}: produced a non-finite value")]
    NonFinite(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("rank {0} tensors are not supported")]
    Rank(usize),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Floating-point element type of tensors: `f32` for training, `f64` for
/// gradient checks.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// One-byte tag used by the checkpoint format.
    const DTYPE: u8;
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
    fn to_le_bytes_vec(self, out: &mut Vec<u8>);
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: u8 = 4;
    const NAME: &'static str = "f32";

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 8;
    const NAME: &'static str = "f64";

    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Logistic function, computed without overflow for large `|x|`.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy `−y·log(p+ε) − (1−y)·log(1−p+ε)`.
pub fn cross_entropy<T: Scalar>(y: T, p: T) -> T {
    let eps = T::from_f64(LOG_EPS);
    -(y * (p + eps).ln()) - (T::one() - y) * (T::one() - p + eps).ln()
}
