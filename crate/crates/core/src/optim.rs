//! Heavy-ball SGD with weight decay and a step learning-rate schedule.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

/// One in-place update: `v = momentum * v - lr * (g + wd * w)`, then `w += v`.
pub fn sgd_update(w: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if w.len() != g.len() || w.len() != v.len() {
        return Err(Error::state(format!(
            "sgd registries misaligned: {} weights, {} grads, {} velocities",
            w.len(),
            g.len(),
            v.len()
        )));
    }
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v - lr * (g + weight_decay * *w);
        *w += *v;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Sgd {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(epoch, multiplier)` milestones.
    pub schedule: Vec<(usize, f64)>,
    lr: f64,
    velocity: HashMap<String, Tensor>,
}

impl Sgd {
    pub fn new(base_lr: f64, momentum: f64, weight_decay: f64, schedule: Vec<(usize, f64)>) -> Result<Self> {
        if !base_lr.is_finite() || base_lr <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {base_lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if weight_decay.is_nan() || weight_decay < 0.0 {
            return Err(Error::invalid(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        if schedule.iter().any(|&(_, m)| m.is_nan() || m <= 0.0) {
            return Err(Error::invalid("schedule multipliers must be positive"));
        }
        Ok(Sgd {
            base_lr,
            momentum,
            weight_decay,
            schedule,
            lr: base_lr,
            velocity: HashMap::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Sets the rate to the base rate times every multiplier whose milestone
    /// epoch is at or before `epoch`.
    pub fn apply_schedule(&mut self, epoch: usize) -> f64 {
        self.lr = self
            .schedule
            .iter()
            .filter(|&&(e, _)| e <= epoch)
            .fold(self.base_lr, |lr, &(_, m)| lr * m);
        self.lr
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor> {
        self.velocity.get(name)
    }

    /// Updates every parameter of `net` from its stored gradient. Velocities
    /// start at zero; parameters marked `decay = false` skip weight decay.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        for (name, p) in net.params_mut() {
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            if v.shape() != p.value.shape() || p.grad.shape() != p.value.shape() {
                return Err(Error::state(format!("parameter `{name}` changed shape")));
            }
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            sgd_update(p.value.data_mut(), p.grad.data(), v.data_mut(), self.lr, self.momentum, wd)?;
        }
        net.mark_updated();
        Ok(())
    }
}
