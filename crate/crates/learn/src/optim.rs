//! AdamW with decoupled weight decay, linear warm-up and plateau decay.

use serde::{Deserialize, Serialize};

use crate::error::{LearnError, Result};
use crate::params::ParamStore;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros = || store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self {
            cfg,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[DenseTensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || grads.len() != store.len() {
            return Err(LearnError::shape("optimizer gradients", &[self.m.len()], &[grads.len()]));
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.get_mut(id).data_mut();
            let g = grads[k].data();
            if g.len() != p.len() {
                return Err(LearnError::shape("parameter gradient", &[p.len()], &[g.len()]));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                p[i] -= lr * c.weight_decay * p[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau for a maximized metric with a relative threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub cooldown: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.8,
            patience: 10,
            threshold: 0.01,
            cooldown: 2,
            min_lr: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plateau {
    cfg: PlateauConfig,
    best: f64,
    bad_epochs: usize,
    cooldown_left: usize,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig) -> Self {
        Self {
            cfg,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
            cooldown_left: 0,
        }
    }

    /// Feeds one epoch's metric; returns the possibly reduced rate.
    pub fn observe(&mut self, metric: f64, lr: f64) -> f64 {
        if metric > self.best * (1.0 + self.cfg.threshold) || self.best == f64::NEG_INFINITY {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.bad_epochs = 0;
        }
        if self.bad_epochs > self.cfg.patience {
            self.cooldown_left = self.cfg.cooldown;
            self.bad_epochs = 0;
            return (lr * self.cfg.factor).max(self.cfg.min_lr);
        }
        lr
    }
}

/// Per-step learning rate: linear warm-up to `peak`, then plateau control.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    peak: f64,
    warmup_steps: u64,
    step: u64,
    after_warmup: f64,
    plateau: Plateau,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_steps: u64, plateau: PlateauConfig) -> Self {
        Self {
            peak,
            warmup_steps,
            step: 0,
            after_warmup: peak,
            plateau: Plateau::new(plateau),
        }
    }

    fn rate_at(&self, step: u64) -> f64 {
        if step <= self.warmup_steps && self.warmup_steps > 0 {
            self.peak * step as f64 / self.warmup_steps as f64
        } else {
            self.after_warmup
        }
    }

    /// Advances one optimizer step and returns its rate.
    pub fn next_step(&mut self) -> f64 {
        self.step += 1;
        self.rate_at(self.step)
    }

    /// Rate of the most recent step.
    pub fn current(&self) -> f64 {
        self.rate_at(self.step.max(1))
    }

    pub fn in_warmup(&self) -> bool {
        self.step < self.warmup_steps
    }

    pub fn end_epoch(&mut self, metric: f64) {
        if !self.in_warmup() {
            self.after_warmup = self.plateau.observe(metric, self.after_warmup);
        }
    }
}
