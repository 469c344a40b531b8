use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::param::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of steps taken so far.
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
        }
    }

    /// Update every parameter holding a gradient, then clear the gradients.
    /// Values are kept representable in 32 bits.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        adam_step(store, self.lr, self.beta1, self.beta2, self.eps, self.t + 1)?;
        self.t += 1;
        Ok(())
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(2e-4, 0.5, 0.999, 1e-8)
    }
}

/// One Adam update at step `t` (1-based) for all parameters with a gradient.
pub fn adam_step(store: &mut ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64, t: u64) -> Result<()> {
    for p in store.iter_mut() {
        if !p.requires_grad {
            p.grad = None;
            continue;
        }
        let Some(g) = p.grad.take() else { continue };
        if !g.all_finite() {
            return Err(AutodiffError::Divergence(format!("non-finite gradient for {}", p.name)));
        }
        let c1 = 1.0 - beta1.powi(t as i32);
        let c2 = 1.0 - beta2.powi(t as i32);
        let (m, v, value) = (p.m.data_mut(), p.v.data_mut(), p.value.data_mut());
        for i in 0..value.len() {
            let gi = g.data()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            value[i] = f64::from((value[i] - step) as f32);
        }
    }
    Ok(())
}
