use super::{Result, RuleSpaceConfig, RuleSpaceError};
use crate::diffmath::{Scalar, Tensor};

/// All attentions that define one relaxed rule.
///
/// Shapes: `s_phi` is `T × K`; `s_psi` and `s_psi2` (first and second
/// argument) are `K × T`; level `l ∈ 1..L` contributes `s_f[l-1]` and
/// `s_f2[l-1]`, each `C × 2·prev`; `s_o` is `1 × pool`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle<T> {
    pub s_phi: Tensor<T>,
    pub s_psi: Tensor<T>,
    pub s_psi2: Tensor<T>,
    pub s_f: Vec<Tensor<T>>,
    pub s_f2: Vec<Tensor<T>>,
    pub s_o: Tensor<T>,
}

/// Gradients with respect to every attention, laid out like the bundle.
pub type BundleGrads<T> = AttentionBundle<T>;

fn uniform<T: Scalar>(rows: usize, cols: usize) -> Tensor<T> {
    Tensor::filled(&[rows, cols], T::one() / T::from_usize(cols))
}

impl<T: Scalar> AttentionBundle<T> {
    /// Every row uniform.
    pub fn uniform(cfg: &RuleSpaceConfig) -> Self {
        let levels = cfg.formula_levels();
        Self {
            s_phi: uniform(cfg.t, cfg.k),
            s_psi: uniform(cfg.k, cfg.t),
            s_psi2: uniform(cfg.k, cfg.t),
            s_f: (1..=levels).map(|l| uniform(cfg.c, 2 * cfg.level_input(l))).collect(),
            s_f2: (1..=levels).map(|l| uniform(cfg.c, 2 * cfg.level_input(l))).collect(),
            s_o: uniform(1, cfg.pool_size()),
        }
    }

    /// Rows drawn uniformly at random and normalized to sum to one.
    pub fn random<R: rand::Rng>(cfg: &RuleSpaceConfig, rng: &mut R) -> Self {
        let mut b = Self::uniform(cfg);
        for t in b.tensors_mut() {
            for i in 0..t.rows() {
                let row: Vec<f64> = (0..t.cols()).map(|_| rng.gen_range(0.0..1.0)).collect();
                let total: f64 = row.iter().sum();
                for (j, x) in row.into_iter().enumerate() {
                    t.set(i, j, T::from_f64(x / total));
                }
            }
        }
        b
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor<T>| Tensor::zeros(t.shape());
        Self {
            s_phi: z(&self.s_phi),
            s_psi: z(&self.s_psi),
            s_psi2: z(&self.s_psi2),
            s_f: self.s_f.iter().map(z).collect(),
            s_f2: self.s_f2.iter().map(z).collect(),
            s_o: z(&self.s_o),
        }
    }

    /// Tensors in canonical order: `s_phi, s_psi, s_psi2, (s_f, s_f2) per
    /// level, s_o`.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.s_phi, &self.s_psi, &self.s_psi2];
        for (a, b) in self.s_f.iter().zip(&self.s_f2) {
            v.push(a);
            v.push(b);
        }
        v.push(&self.s_o);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.s_phi, &mut self.s_psi, &mut self.s_psi2];
        for (a, b) in self.s_f.iter_mut().zip(self.s_f2.iter_mut()) {
            v.push(a);
            v.push(b);
        }
        v.push(&mut self.s_o);
        v
    }

    /// Inverse of [`AttentionBundle::tensors`].
    pub fn from_tensors(mut ts: Vec<Tensor<T>>) -> Result<Self> {
        if ts.len() < 4 || !(ts.len() - 4).is_multiple_of(2) {
            return Err(RuleSpaceError::Config(format!(
                "bundle needs 4 + 2·levels tensors, got {}",
                ts.len()
            )));
        }
        let s_o = ts.pop().expect("len ≥ 4");
        let mut it = ts.into_iter();
        let s_phi = it.next().expect("len ≥ 4");
        let s_psi = it.next().expect("len ≥ 4");
        let s_psi2 = it.next().expect("len ≥ 4");
        let rest: Vec<Tensor<T>> = it.collect();
        let (mut s_f, mut s_f2) = (Vec::new(), Vec::new());
        for pair in rest.chunks(2) {
            s_f.push(pair[0].clone());
            s_f2.push(pair[1].clone());
        }
        Ok(Self {
            s_phi,
            s_psi,
            s_psi2,
            s_f,
            s_f2,
            s_o,
        })
    }

    /// Expected shapes in canonical order, with display names.
    pub fn expected_shapes(cfg: &RuleSpaceConfig) -> Vec<(String, [usize; 2])> {
        let mut v = vec![
            ("S_phi".to_string(), [cfg.t, cfg.k]),
            ("S_psi".to_string(), [cfg.k, cfg.t]),
            ("S_psi'".to_string(), [cfg.k, cfg.t]),
        ];
        for l in 1..=cfg.formula_levels() {
            let w = 2 * cfg.level_input(l);
            v.push((format!("S_f[{l}]"), [cfg.c, w]));
            v.push((format!("S_f'[{l}]"), [cfg.c, w]));
        }
        v.push(("s_o".to_string(), [1, cfg.pool_size()]));
        v
    }

    /// Checks shapes only.
    pub fn check_shapes(&self, cfg: &RuleSpaceConfig) -> Result<()> {
        cfg.validate()?;
        let expected = Self::expected_shapes(cfg);
        let got = self.tensors();
        if expected.len() != got.len() {
            return Err(RuleSpaceError::Config(format!(
                "bundle has {} formula levels, config has {}",
                self.s_f.len(),
                cfg.formula_levels()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(got) {
            if t.shape() != shape {
                return Err(RuleSpaceError::Shape {
                    what: name.clone(),
                    expected: shape.to_vec(),
                    got: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Checks shapes and that every row is a probability vector.
    pub fn validate(&self, cfg: &RuleSpaceConfig) -> Result<()> {
        self.check_shapes(cfg)?;
        let tol = 1e-6f64.max(64.0 * T::epsilon().as_f64());
        for ((name, _), t) in Self::expected_shapes(cfg).iter().zip(self.tensors()) {
            for i in 0..t.rows() {
                let r = t.row(i);
                let s: f64 = r.iter().map(|x| x.as_f64()).sum();
                if r.iter().any(|&x| x < T::zero() || !x.is_finite()) || (s - 1.0).abs() > tol {
                    return Err(RuleSpaceError::NotStochastic {
                        what: name.clone(),
                        row: i,
                    });
                }
            }
        }
        Ok(())
    }

    /// True when every row is one-hot.
    pub fn is_hard(&self) -> bool {
        self.tensors().iter().all(|t| {
            (0..t.rows()).all(|i| {
                let r = t.row(i);
                r.iter().filter(|&&x| x == T::one()).count() == 1 && r.iter().all(|&x| x == T::zero() || x == T::one())
            })
        })
    }

    pub fn cast<U: Scalar>(&self) -> AttentionBundle<U> {
        AttentionBundle {
            s_phi: self.s_phi.cast(),
            s_psi: self.s_psi.cast(),
            s_psi2: self.s_psi2.cast(),
            s_f: self.s_f.iter().map(Tensor::cast).collect(),
            s_f2: self.s_f2.iter().map(Tensor::cast).collect(),
            s_o: self.s_o.cast(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }
}

fn harden_tensor<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(t.shape());
    for (i, j) in t.argmax_rows().into_iter().enumerate() {
        out.set(i, j, T::one());
    }
    out
}

/// Replaces every attention row by the one-hot of its largest entry, ties
/// going to the lowest index.
pub fn harden<T: Scalar>(b: &AttentionBundle<T>) -> AttentionBundle<T> {
    AttentionBundle {
        s_phi: harden_tensor(&b.s_phi),
        s_psi: harden_tensor(&b.s_psi),
        s_psi2: harden_tensor(&b.s_psi2),
        s_f: b.s_f.iter().map(harden_tensor).collect(),
        s_f2: b.s_f2.iter().map(harden_tensor).collect(),
        s_o: harden_tensor(&b.s_o),
    }
}
