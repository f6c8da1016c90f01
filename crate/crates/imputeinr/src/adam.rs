//! ADAM optimizer over a list of tensors, with bias-corrected moment
//! estimates and optional global-norm gradient clipping.

use crate::matrix::Matrix;

/// First and second moment accumulators, one pair per parameter tensor.
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

/// Scalar knobs for one optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero-initialized state matching the given tensor shapes.
    pub fn new(params: &[Matrix]) -> Self {
        AdamState {
            m: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
            t: 0,
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One in-place update. `grads` must align with `params` elementwise.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], h: AdamHyper) {
        assert_eq!(params.len(), grads.len(), "gradient layout");
        assert_eq!(params.len(), self.m.len(), "state layout");
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - h.beta1.powf(t);
        let bc2 = 1.0 - h.beta2.powf(t);
        for i in 0..params.len() {
            let p = params[i].as_mut_slice();
            let g = grads[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            assert_eq!(p.len(), g.len(), "tensor {i} shape");
            for j in 0..p.len() {
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
            }
        }
    }
}

/// Euclidean norm over all gradient entries taken together.
pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(|g| g.frobenius_sq()).sum::<f64>().sqrt()
}

/// Scale every gradient down so the global norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.as_mut_slice() {
                *x *= scale;
            }
        }
    }
    norm
}
