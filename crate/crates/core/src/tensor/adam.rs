use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::value::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam { lr, weight_decay, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers, one per parameter (empty before
    /// the first step).
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// Rebuild an optimizer from saved state.
    pub fn from_state(lr: f64, weight_decay: f64, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Self {
        Adam { lr, weight_decay, step, first, second }
    }

    /// One update of `params` from `grads` (same order, same shapes).
    /// Parameters with a `None` gradient are left untouched and their
    /// moments do not advance.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let shapes_ok = self.first.get(i).is_some_and(|m| m.len() == p.numel());
            if !shapes_ok || g.as_ref().is_some_and(|g| g.shape() != p.shape()) {
                return Err(Error::shape(
                    "adam_step",
                    &[p.shape(), g.as_ref().map_or(&[][..], |g| g.shape())],
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                if self.weight_decay != 0.0 {
                    *w -= self.lr * self.weight_decay * *w;
                }
                *w -= self.lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        Ok(())
    }

    /// Update every parameter of `store` that has a gradient.
    pub fn step_store(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        let mut params: Vec<&mut Tensor> = store.values_mut().iter_mut().collect();
        self.step(&mut params, grads)
    }
}
