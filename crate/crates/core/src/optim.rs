//! Adam and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new<'a>(lr: f64, shapes: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (first, second) = shapes
            .into_iter()
            .map(|m| {
                (
                    Matrix::zeros(m.rows(), m.cols()),
                    Matrix::zeros(m.rows(), m.cols()),
                )
            })
            .unzip();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first,
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates `params[k]` with `grads[k]` wherever `active[k]` is set.
    ///
    /// # Panics
    /// If the slices disagree in length or a gradient's shape differs from its
    /// parameter.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], active: &[bool]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(grads.len(), params.len());
        assert_eq!(active.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for k in 0..params.len() {
            if !active[k] {
                continue;
            }
            assert_eq!(
                params[k].shape(),
                grads[k].shape(),
                "gradient shape for tensor {k}"
            );
            let p = params[k].data_mut();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (i, &g) in grads[k].data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g = g.scale(s));
    }
    norm
}
