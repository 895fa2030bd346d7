use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
pub const DEFAULT_LR: f64 = 1e-3;

/// Bias-corrected Adam with zero-initialised moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr, beta1: BETA1, beta2: BETA2, eps: EPSILON }
    }

    /// One update of `params` along `grad`. A non-finite gradient aborts
    /// before anything is modified and names the offending segment.
    pub fn step(&mut self, store: &mut ParamStore, grad: &[f64]) -> Result<()> {
        if grad.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Dimension(format!(
                "gradient has {} entries, store {}, optimizer {}",
                grad.len(),
                store.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            let segment = store.segment_of(i).map_or_else(|| format!("slot {i}"), |s| format!("{} (slot {i})", s.name));
            return Err(Error::NonFiniteGradient { step: self.t as usize, segment });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((w, &g), m), v) in store.values.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *w -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}
