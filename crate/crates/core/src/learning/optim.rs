use serde::{Deserialize, Serialize};

use crate::error::{MogError, Result};
use crate::tensor::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Each gradient coordinate is clipped to `[-clip, clip]`.
    pub clip: f64,
    pub l2_weight: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 5.0,
            l2_weight: 1e-5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip > 0.0
            && self.l2_weight >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(MogError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Adds the gradient of `l2 * Σ θ²` into the store and returns the penalty.
pub fn add_l2_gradient(store: &mut ParamStore, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let mut penalty = 0.0;
    for (_, t) in store.iter_mut() {
        let theta = t.data().to_vec();
        penalty += l2 * theta.iter().map(|x| x * x).sum::<f64>();
        t.accumulate_grad(&theta, 2.0 * l2);
    }
    penalty
}

/// Adam with per-coordinate gradient clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: OptimizerConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Restores saved moments; shapes must match the store.
    pub fn from_state(config: OptimizerConfig, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, store: &ParamStore) -> Result<Self> {
        let sizes: Vec<usize> = store.iter().map(|(_, t)| t.numel()).collect();
        let fits = |x: &Vec<Vec<f64>>| x.len() == sizes.len() && x.iter().zip(&sizes).all(|(a, &n)| a.len() == n);
        if !fits(&m) || !fits(&v) {
            return Err(MogError::state("optimizer moments do not match the parameters"));
        }
        Ok(Adam { config, step, m, v })
    }

    /// Applies one update from the gradients held in `store`.
    pub fn update(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(MogError::state("optimizer was built for a different parameter set"));
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        for (i, (_, t)) in store.iter_mut().enumerate() {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (theta, g)) in t.data_mut().iter_mut().zip(g).enumerate() {
                let g = g.clamp(-c.clip, c.clip);
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *theta -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
