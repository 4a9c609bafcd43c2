use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, ParamStore};

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: store.zeros_like(),
            v: store.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        assert_eq!(grads.len(), self.m.len(), "gradient count differs from parameter count");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id).as_mut_slice();
            let g = grads[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::squared_norm).sum::<f64>().sqrt()
}

/// Rescale so the global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(f);
        }
    }
    norm
}
