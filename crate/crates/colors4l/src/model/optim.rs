//! Optimizers: cosine-decayed momentum SGD for classifier training and
//! Adam for colorizer pretraining.
//!
//! Both walk a model's parameter visitor and update only tensors whose
//! gradient was written this step, so a loss touching one head leaves the
//! other head's parameters bitwise unchanged.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::nn::{ParamKind, Scalar, VisitParams};

/// Momentum SGD hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Cosine schedule horizon; the learning rate reaches ~0 here.
    pub total_steps: u64,
}

impl SgdConfig {
    pub fn new(lr0: f64, total_steps: u64) -> Self {
        SgdConfig {
            lr0,
            momentum: 0.9,
            weight_decay: 5e-4,
            total_steps,
        }
    }
}

/// Momentum SGD with L2 weight decay and cosine learning-rate decay.
#[derive(Debug, Clone)]
pub struct Sgd<S: Scalar> {
    pub cfg: SgdConfig,
    pub step: u64,
    velocity: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd {
            cfg,
            step: 0,
            velocity: BTreeMap::new(),
        }
    }

    /// Cosine-decayed learning rate at a given step.
    pub fn lr_at(&self, step: u64) -> f64 {
        let t = (step as f64 / self.cfg.total_steps.max(1) as f64).min(1.0);
        self.cfg.lr0 * 0.5 * (1.0 + (PI * t).cos())
    }

    /// Apply one update to every used trainable tensor, then advance the
    /// step counter.
    pub fn apply(&mut self, model: &mut dyn VisitParams<S>) {
        let lr = S::sc(self.lr_at(self.step));
        let mu = S::sc(self.cfg.momentum);
        let wd = S::sc(self.cfg.weight_decay);
        let velocity = &mut self.velocity;
        model.visit_params("", &mut |name, kind, p| {
            if kind != ParamKind::Trainable || !p.used() {
                return;
            }
            let n = p.value().len();
            let vel = velocity.entry(name).or_insert_with(|| vec![S::zero(); n]);
            let grads = p.grad().to_vec();
            for ((w, &g), v) in p.value_mut().iter_mut().zip(&grads).zip(vel.iter_mut()) {
                *v = mu * *v + g + wd * *w;
                *w = *w - lr * *v;
            }
        });
        self.step += 1;
    }

    /// Momentum buffers for checkpointing, in name order.
    pub fn velocity_tensors(&self) -> impl Iterator<Item = (&String, &Vec<S>)> {
        self.velocity.iter()
    }

    pub fn restore_velocity(&mut self, name: String, data: Vec<S>) {
        self.velocity.insert(name, data);
    }
}

/// Adam with fixed learning rate (colorizer pretraining).
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<String, Vec<S>>,
    second: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, model: &mut dyn VisitParams<S>) {
        self.step += 1;
        let t = self.step as f64;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let corr1 = 1.0 - b1.powf(t);
        let corr2 = 1.0 - b2.powf(t);
        let lr = S::sc(self.lr * corr2.sqrt() / corr1);
        let b1s = S::sc(b1);
        let b2s = S::sc(b2);
        let one = S::one();
        let eps = S::sc(self.eps);
        let (first, second) = (&mut self.first, &mut self.second);
        model.visit_params("", &mut |name, kind, p| {
            if kind != ParamKind::Trainable || !p.used() {
                return;
            }
            let n = p.value().len();
            let m = first.entry(name.clone()).or_insert_with(|| vec![S::zero(); n]);
            let v = second.entry(name).or_insert_with(|| vec![S::zero(); n]);
            let grads = p.grad().to_vec();
            for (((w, &g), mi), vi) in p.value_mut().iter_mut().zip(&grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1s * *mi + (one - b1s) * g;
                *vi = b2s * *vi + (one - b2s) * g * g;
                *w = *w - lr * *mi / (vi.sqrt() + eps);
            }
        });
    }
}
