use crate::model::{ParamId, ParamStore};
use crate::numerics::Tensor;

/// Adam hyper-parameters with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamW {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update with learning rate `lr`; `grads[i]` is `None` for
    /// parameters that received no gradient (treated as zero).
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<&[f32]>], lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let decay = if store.decays(ParamId(i)) { c.weight_decay } else { 0.0 };
            let p = store.get_mut(ParamId(i)).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j] as f64);
                let mj = c.beta1 * m[j] as f64 + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v[j] as f64 + (1.0 - c.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let upd = (mj / bc1) / ((vj / bc2).sqrt() + c.eps) + decay * p[j] as f64;
                p[j] = (p[j] as f64 - lr * upd) as f32;
            }
        }
    }
}

/// Linear warmup to `peak`, then linear decay towards zero at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: u64,
    pub total: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total: u64) -> Self {
        let warmup = ((warmup_fraction * total as f64).round() as u64).min(total);
        LrSchedule { peak, warmup, total }
    }

    /// Rate for 1-based step `s`.
    pub fn at(&self, s: u64) -> f64 {
        if s <= self.warmup {
            self.peak * s as f64 / self.warmup as f64
        } else if s > self.total {
            0.0
        } else {
            self.peak * (self.total - s + 1) as f64 / (self.total - self.warmup) as f64
        }
    }
}
