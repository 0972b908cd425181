//! First-order parameter updates.

use serde::{Deserialize, Serialize};

use super::array::Tensor;
use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdNesterov,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Nesterov momentum for SGD, first-moment decay for Adam.
    pub momentum: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdNesterov,
            lr: 0.01,
            momentum: 0.99,
            weight_decay: 3e-5,
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
        }
    }
}

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &[Tensor<T>]) -> Result<Self> {
        if !(config.lr >= 0.0) || !(0.0..1.0).contains(&config.momentum) || config.weight_decay < 0.0 {
            return Err(Error::Config(format!("bad optimizer settings {config:?}")));
        }
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        let second = if config.kind == OptimizerKind::Adam { zeros() } else { Vec::new() };
        Ok(Optimizer {
            config,
            first: zeros(),
            second,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update with learning rate `lr` (the schedule lives with the caller).
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape("optimizer_step", "parameter list changed"));
        }
        self.steps += 1;
        let c = &self.config;
        let wd = T::from_f64(c.weight_decay);
        let mu = T::from_f64(c.momentum);
        let lr_t = T::from_f64(lr);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer_step", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
            match c.kind {
                OptimizerKind::SgdNesterov => {
                    let v = self.first[i].data_mut();
                    for ((w, &gr), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        let d = gr + wd * *w;
                        *vel = mu * *vel + d;
                        *w -= lr_t * (d + mu * *vel);
                    }
                }
                OptimizerKind::Adam => {
                    let b1 = c.momentum;
                    let b2 = c.beta2;
                    let bc1 = 1.0 - b1.powi(self.steps as i32);
                    let bc2 = 1.0 - b2.powi(self.steps as i32);
                    let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
                    let (one_b1, one_b2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
                    let step = T::from_f64(lr / bc1);
                    let inv_bc2 = T::from_f64(1.0 / bc2);
                    let eps = T::from_f64(c.adam_eps);
                    let (m, v) = (self.first[i].data_mut(), self.second[i].data_mut());
                    for (((w, &gr), mm), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let d = gr + wd * *w;
                        *mm = b1t * *mm + one_b1 * d;
                        *vv = b2t * *vv + one_b2 * d * d;
                        *w -= step * *mm / ((*vv * inv_bc2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
