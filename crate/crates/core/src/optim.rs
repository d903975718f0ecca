//! Adam with decoupled weight decay, global-norm clipping and the learning
//! rate schedule.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::PI;
#[allow(unused_imports)]
use crate::math::Float;
use crate::nn::{global_norm, ParamStore};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine decay to zero over the run.
    Cosine,
}

impl Schedule {
    pub fn lr(self, base: f64, step: usize, total_steps: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine if total_steps > 0 => {
                let t = (step as f64 / total_steps as f64).min(1.0);
                0.5 * base * (1.0 + (PI * t).cos())
            }
            Schedule::Cosine => base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Optimizer state; one moment pair per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub params: AdamParams,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: AdamParams, store: &ParamStore) -> Self {
        Adam {
            params,
            step: 0,
            m: store.zero_grads(),
            v: store.zero_grads(),
        }
    }

    /// One update at learning rate `lr`. Decay applies to parameters flagged
    /// for it, scaled by `lr` and independent of the gradient moments.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Matrix], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape("adam", alloc::format!("{} grads for {} params", grads.len(), store.len())));
        }
        self.step += 1;
        let p = self.params;
        let b1t = 1.0 - p.beta1.powi(self.step as i32);
        let b2t = 1.0 - p.beta2.powi(self.step as i32);
        for (i, entry) in store.entries_mut().iter_mut().enumerate() {
            let g = grads[i].as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            let decay = if entry.decay { p.weight_decay } else { 0.0 };
            for (k, w) in entry.value.as_mut_slice().iter_mut().enumerate() {
                m[k] = p.beta1 * m[k] + (1.0 - p.beta1) * g[k];
                v[k] = p.beta2 * v[k] + (1.0 - p.beta2) * g[k] * g[k];
                let mh = m[k] / b1t;
                let vh = v[k] / b2t;
                *w -= lr * (mh / (vh.sqrt() + p.eps) + decay * *w);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if max_norm > 0.0 && n > max_norm {
        let s = max_norm / n;
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::filled(1, 2, 1.0), false);
        let mut adam = Adam::new(
            AdamParams {
                lr: 0.1,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            },
            &store,
        );
        let g = alloc::vec![Matrix::from_rows(&[&[2.0, -3.0]])];
        adam.update(&mut store, &g, 0.1).unwrap();
        let w = store.entries()[0].value.as_slice();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn clipping() {
        let mut g = alloc::vec![Matrix::from_rows(&[&[3.0, 4.0]])];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].as_slice(), &[3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(Schedule::Cosine.lr(1.0, 0, 10), 1.0);
        assert!(Schedule::Cosine.lr(1.0, 10, 10).abs() < 1e-12);
        assert_eq!(Schedule::Constant.lr(0.3, 7, 10), 0.3);
    }
}
