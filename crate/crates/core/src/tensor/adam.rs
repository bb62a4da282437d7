use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |_| Vec::new();
        Adam {
            config,
            step: 0,
            first: (0..store.len()).map(zeros).collect(),
            second: (0..store.len()).map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Moment buffers per parameter; empty until that parameter first
    /// receives a gradient.
    pub fn moments(&self) -> impl Iterator<Item = (&[T], &[T])> {
        self.first
            .iter()
            .zip(&self.second)
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub fn restore(config: AdamConfig, step: u64, first: Vec<Vec<T>>, second: Vec<Vec<T>>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::arg("adam state: moment lists differ in length"));
        }
        Ok(Adam {
            config,
            step,
            first,
            second,
        })
    }

    /// Applies one update from the gradients held in `store`. Parameters
    /// without a gradient are left untouched. A non-finite gradient aborts
    /// the whole step before any parameter changes.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(Error::arg(format!(
                "adam state tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            if let Some(g) = store.get(id).grad() {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient in parameter `{}`",
                        store.name(id)
                    )));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let eps = T::from_f64_lossy(c.eps);
        let lr = T::from_f64_lossy(c.lr);
        let t = self.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (i, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let Some(g) = tensor.grad.take() else { continue };
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            if m.is_empty() {
                *m = vec![T::zero(); g.len()];
                *v = vec![T::zero(); g.len()];
            }
            for (j, p) in tensor.data.iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
            tensor.grad = Some(g);
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> T {
    let total: T = store
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter().map(|&x| x * x))
        .sum();
    let norm = total.sqrt();
    let max = T::from_f64_lossy(max_norm);
    if norm > max && norm > T::zero() {
        let factor = max / norm;
        for t in store.tensors_mut() {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }
    norm
}
