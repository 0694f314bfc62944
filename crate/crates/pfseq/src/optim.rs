//! Named parameter collections, Adam, and the learning-rate schedule.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct Params {
    items: Vec<Param>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let idx = self.items.len();
        let grad = Tensor::zeros(value.shape().to_vec());
        self.items.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.items[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.items[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.items.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.grad.values_mut().fill(0.0);
        }
    }

    pub fn total_scalars(&self) -> usize {
        self.items.iter().map(|p| p.value.numel()).sum()
    }

    /// Copy of all current values, for before/after comparisons in tests.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.items.iter().map(|p| p.value.clone()).collect()
    }

    pub fn bitwise_eq(&self, snapshot: &[Tensor]) -> bool {
        self.items.len() == snapshot.len()
            && self
                .items
                .iter()
                .zip(snapshot)
                .all(|(p, s)| {
                    p.value.shape() == s.shape()
                        && p.value
                            .values()
                            .iter()
                            .zip(s.values())
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                })
    }
}

/// Adam optimizer state (first/second moments per parameter).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &Params, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn from_parts(
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        step: u64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        AdamState {
            m,
            v,
            step,
            beta1,
            beta2,
            eps,
        }
    }

    pub(crate) fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected Adam update over all parameters; gradients are
    /// zeroed afterwards.
    pub fn apply(&mut self, params: &mut Params, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {lr}")));
        }
        if self.m.len() != params.len() {
            return Err(Error::config(format!(
                "optimizer tracks {} parameters, collection has {}",
                self.m.len(),
                params.len()
            )));
        }
        for i in 0..params.len() {
            let p = params.get(i);
            if p.grad.shape() != self.m[i].shape() {
                return Err(Error::config(format!(
                    "gradient shape {:?} does not match optimizer moments {:?} for `{}`",
                    p.grad.shape(),
                    self.m[i].shape(),
                    p.name
                )));
            }
            if !p.grad.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter `{}`",
                    p.name
                )));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let p = params.get_mut(i);
            let m = self.m[i].values_mut();
            let v = self.v[i].values_mut();
            let grads = p.grad.values();
            let vals = p.value.values_mut();
            for j in 0..vals.len() {
                let g = grads[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                vals[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}

/// Geometric interpolation between two learning rates, pinned to both
/// endpoints, constant after `decay_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub lr_final: f64,
    pub decay_steps: u64,
}

impl LrSchedule {
    pub fn new(lr0: f64, lr_final: f64, decay_steps: u64) -> Result<Self> {
        if !(lr0 > 0.0) || !(lr_final > 0.0) {
            return Err(Error::config("learning rates must be > 0"));
        }
        if decay_steps == 0 {
            return Err(Error::config("decay_steps must be >= 1"));
        }
        Ok(LrSchedule {
            lr0,
            lr_final,
            decay_steps,
        })
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step == 0 {
            return self.lr0;
        }
        if step >= self.decay_steps {
            return self.lr_final;
        }
        let t = step as f64 / self.decay_steps as f64;
        self.lr0 * (self.lr_final / self.lr0).powf(t)
    }
}
