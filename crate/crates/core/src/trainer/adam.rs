use crate::diffmath::{ParamStore, Scalar, Tensor};

/// Adaptive moment estimation with bias correction. Moments are kept in
/// the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    steps: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One update from `grads`, given in parameter-store order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter tensor");
        self.steps += 1;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let c1 = T::from_f64(1.0 - self.beta1.powi(self.steps));
        let c2 = T::from_f64(1.0 - self.beta2.powi(self.steps));
        let (lr, eps) = (T::from_f64(self.lr), T::from_f64(self.eps));
        let one = T::one();
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut ps = ParamStore::<f64>::new();
        ps.add("w", Tensor::vector(vec![1.0, -2.0, 0.5]));
        let mut opt = Adam::new(&ps, 0.1, 0.9, 0.999, 1e-8);
        opt.step(&mut ps, &[Tensor::vector(vec![3.0, -0.5, 0.0])]);
        let w = ps.tensors()[0].data();
        // The bias-corrected first step is lr · g / (|g| + eps).
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn zero_rate_changes_nothing() {
        let mut ps = ParamStore::<f32>::new();
        ps.add("w", Tensor::vector(vec![0.3, 0.7]));
        let before = ps.clone();
        let mut opt = Adam::new(&ps, 0.0, 0.9, 0.999, 1e-8);
        for _ in 0..5 {
            opt.step(&mut ps, &[Tensor::vector(vec![1.0, -1.0])]);
        }
        assert_eq!(ps, before);
    }
}
