use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam { lr: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }

    pub fn build(&self, params: &ParamStore) -> Optimizer {
        match *self {
            OptimizerConfig::Adam { lr } => Optimizer::Adam(Adam::new(lr, params)),
            OptimizerConfig::Sgd { lr, momentum } => Optimizer::Sgd(Sgd::new(lr, momentum, params)),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.numel()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        check_grads(params, grads, self.m.len())?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, params: &ParamStore) -> Self {
        Self { lr, momentum, velocity: params.tensors().map(|t| vec![0.0; t.numel()]).collect() }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        check_grads(params, grads, self.velocity.len())?;
        for ((p, g), vel) in params.tensors_mut().zip(grads).zip(&mut self.velocity) {
            for i in 0..g.len() {
                vel[i] = self.momentum * vel[i] + g[i];
                p.data[i] -= self.lr * vel[i];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }
}

fn check_grads(params: &ParamStore, grads: &[Vec<f64>], state_len: usize) -> Result<()> {
    if grads.len() != params.len() || state_len != params.len() {
        return Err(Error::shape("optimizer", format!("{} params, {} grads", params.len(), grads.len())));
    }
    for ((name, t), g) in params.names().zip(params.tensors()).zip(grads) {
        if g.len() != t.numel() {
            return Err(Error::shape("optimizer", format!("{name}: {:?} vs gradient of {}", t.shape, g.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(())
}
