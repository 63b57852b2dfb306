use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::params::{Origin, ParamStore};

/// Linear warmup over the first `warmup · total` steps, then cosine decay to 0.
pub fn learning_rate(base: f64, step: u64, total: u64, warmup: f64) -> f64 {
    let total = total.max(1);
    let warm = (warmup * total as f64).ceil() as u64;
    if step < warm {
        return base * (step + 1) as f64 / warm as f64;
    }
    let span = (total - warm).max(1);
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}

/// Adam with decoupled weight decay. Decay applies to matrices only (both
/// extents > 1); biases, norms, scalars and row embeddings are exempt.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub fresh_mult: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64, fresh_mult: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay,
            fresh_mult,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update at learning rate `lr` (times the fresh multiplier for fresh
    /// parameters). Parameters in `frozen` or without a gradient are untouched.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Vec<f64>>,
        lr: f64,
        frozen: &BTreeSet<String>,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            if frozen.contains(name) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            if g.len() != p.value.len() {
                return Err(Error::shape(format!(
                    "gradient for `{name}` has {} entries, expected {}",
                    g.len(),
                    p.value.len()
                )));
            }
            let rate = if p.origin == Origin::Fresh {
                lr * self.fresh_mult
            } else {
                lr
            };
            let decay = p.value.rank() == 2 && p.value.shape()[0] > 1 && p.value.shape()[1] > 1;
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                if decay {
                    *w -= rate * self.weight_decay * *w;
                }
                *w -= rate * update;
            }
            if !p.value.is_finite() {
                return Err(Error::NonFinite(format!("parameter `{name}` after update")));
            }
        }
        Ok(())
    }
}
