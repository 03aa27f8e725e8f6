use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::layers::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Adam with bias correction. Moments are kept per parameter and rounded to
/// `f32` together with the parameters when the store is `f32`-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<ParamId, Tensor>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let exact = store.f32_exact();
        for (&id, g) in grads {
            let entry = store.entry(id);
            if !entry.trainable {
                continue;
            }
            if entry.tensor.shape() != g.shape() {
                return Err(crate::error::shape_err("adam", entry.tensor.shape(), g.shape()));
            }
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let (b1, b2) = (self.beta1, self.beta2);
            for ((mi, vi), &gi) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                if exact {
                    *mi = *mi as f32 as f64;
                    *vi = *vi as f32 as f64;
                }
            }
            let (lr, eps) = (self.lr, self.eps);
            let (m, v) = (&*m, &*v);
            store.update(id, |p| {
                for ((pi, &mi), &vi) in p.iter_mut().zip(m.data()).zip(v.data()) {
                    *pi -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                }
            });
        }
        Ok(())
    }

    /// Moments as named tensors (`adam.m.<param>`, `adam.v.<param>`).
    pub fn state_tensors(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(self.moments.len() * 2);
        for (id, (m, v)) in &self.moments {
            let name = &store.entry(*id).name;
            out.push((format!("adam.m.{name}"), m.clone()));
            out.push((format!("adam.v.{name}"), v.clone()));
        }
        out
    }

    pub fn load_state<'a>(
        &mut self,
        store: &ParamStore,
        step: u64,
        tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
    ) -> Result<()> {
        self.step = step;
        self.moments.clear();
        let mut half: BTreeMap<ParamId, (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
        for (name, t) in tensors {
            let (slot, pname) = if let Some(p) = name.strip_prefix("adam.m.") {
                (0, p)
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                (1, p)
            } else {
                continue;
            };
            let id = store
                .find(pname)
                .ok_or_else(|| NeuralError::Checkpoint(format!("optimizer state for unknown parameter {pname}")))?;
            if store.get(id).shape() != t.shape() {
                return Err(crate::error::shape_err("adam state", store.get(id).shape(), t.shape()));
            }
            let e = half.entry(id).or_default();
            if slot == 0 {
                e.0 = Some(t.clone());
            } else {
                e.1 = Some(t.clone());
            }
        }
        for (id, pair) in half {
            match pair {
                (Some(m), Some(v)) => {
                    self.moments.insert(id, (m, v));
                }
                _ => {
                    return Err(NeuralError::Checkpoint(format!(
                        "incomplete optimizer state for {}",
                        store.entry(id).name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Halves the learning rate when the validation loss has not improved on
/// its best value for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            factor: 0.5,
            patience: 3,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's validation loss and returns the learning rate for
    /// the next epoch. Only a strictly lower loss counts as improvement.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        match self.best {
            Some(b) if !(val_loss < b) => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.lr *= self.factor;
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(val_loss);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}
