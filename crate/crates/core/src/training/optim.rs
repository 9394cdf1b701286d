use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            OptimizerConfig::Sgd { momentum } => (0.0..1.0).contains(&momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    pub fn build(&self, learning_rate: f64) -> Optimizer {
        Optimizer {
            config: *self,
            learning_rate,
            step: 0,
            slots: Vec::new(),
        }
    }
}

/// Per-parameter first and second moment buffers.
#[derive(Debug, Clone, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam or momentum SGD over every parameter of a store. Moments are kept
/// in 64-bit.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    learning_rate: f64,
    step: u64,
    slots: Vec<Slot>,
}

impl Optimizer {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently in `store`.
    /// Parameters without a gradient are left alone.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        if self.slots.len() < ids.len() {
            self.slots.resize_with(ids.len(), Slot::default);
        }
        let lr = self.learning_rate;
        for (k, id) in ids.into_iter().enumerate() {
            let t = store.get_mut(id);
            let Some(grad) = t.grad().map(<[T]>::to_vec) else {
                continue;
            };
            let slot = &mut self.slots[k];
            if slot.m.len() != grad.len() {
                slot.m = vec![0.0; grad.len()];
                slot.v = vec![0.0; grad.len()];
            }
            let data = t.data_mut();
            match self.config {
                OptimizerConfig::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step as i32);
                    let c2 = 1.0 - beta2.powi(self.step as i32);
                    for i in 0..grad.len() {
                        let g = grad[i].as_f64();
                        slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                        slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                        let update = lr * (slot.m[i] / c1) / ((slot.v[i] / c2).sqrt() + eps);
                        data[i] = T::of(data[i].as_f64() - update);
                    }
                }
                OptimizerConfig::Sgd { momentum } => {
                    for i in 0..grad.len() {
                        slot.m[i] = momentum * slot.m[i] + grad[i].as_f64();
                        data[i] = T::of(data[i].as_f64() - lr * slot.m[i]);
                    }
                }
            }
        }
    }
}
