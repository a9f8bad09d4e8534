//! AMSGrad parameter updates and early-stopping bookkeeping.

use std::collections::HashMap;

use crate::error::Error;
use crate::tensor::{GradMap, Scalar, Tensor};
use crate::Result;

/// AMSGrad hyperparameters. Only the optimizer name and the 1e-4 learning
/// rate are pinned by the training recipe; the betas and epsilon are the
/// conventional defaults, weight decay is off, and bias correction (common
/// AMSGrad practice) is selectable.
#[derive(Clone, Copy, Debug)]
pub struct AmsgradConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub weight_decay: T,
    pub bias_correction: bool,
}

impl<T: Scalar> Default for AmsgradConfig<T> {
    fn default() -> Self {
        AmsgradConfig {
            lr: T::from_f64(1e-4),
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            epsilon: T::from_f64(1e-8),
            weight_decay: T::ZERO,
            bias_correction: true,
        }
    }
}

struct Slot<T> {
    m: Vec<T>,
    v: Vec<T>,
    v_max: Vec<T>,
}

/// Adam variant keeping the elementwise running maximum of the second
/// moment, so the effective step size never re-inflates after a large
/// gradient has been seen.
pub struct Amsgrad<T> {
    pub config: AmsgradConfig<T>,
    step_count: u64,
    slots: HashMap<String, Slot<T>>,
}

impl<T: Scalar> Amsgrad<T> {
    pub fn new(config: AmsgradConfig<T>) -> Self {
        Amsgrad {
            config,
            step_count: 0,
            slots: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Elementwise max of the second moment seen so far for a parameter.
    pub fn v_max_of(&self, name: &str) -> Option<&[T]> {
        self.slots.get(name).map(|s| s.v_max.as_slice())
    }

    /// Apply one update. `for_each_param` must yield every `(name, tensor)`
    /// pair (e.g. `|f| net.visit_params_mut(f)`); parameters without an
    /// entry in `grads` are treated as having zero gradient.
    ///
    /// A non-finite gradient anywhere aborts the step before any parameter
    /// or moment is touched.
    pub fn step(
        &mut self,
        grads: &GradMap<T>,
        for_each_param: impl FnOnce(&mut dyn FnMut(&str, &mut Tensor<T>)),
    ) -> Result<()> {
        for (name, g) in grads {
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Optim(format!(
                    "non-finite gradient for `{name}`; step aborted"
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count;
        let cfg = self.config;
        let one = T::ONE;

        let (bc_m, bc_v) = if cfg.bias_correction {
            (one - pow(cfg.beta1, t), one - pow(cfg.beta2, t))
        } else {
            (one, one)
        };

        let slots = &mut self.slots;
        for_each_param(&mut |name: &str, param: &mut Tensor<T>| {
            let n = param.len();
            let slot = slots.entry(name.to_string()).or_insert_with(|| Slot {
                m: vec![T::ZERO; n],
                v: vec![T::ZERO; n],
                v_max: vec![T::ZERO; n],
            });
            debug_assert_eq!(slot.m.len(), n, "moment shape drifted for {name}");
            let zero_grad;
            let g: &[T] = match grads.get(name) {
                Some(g) => g.data(),
                None => {
                    zero_grad = vec![T::ZERO; n];
                    &zero_grad
                }
            };
            let p = param.data_mut();
            for i in 0..n {
                let mut gi = g[i];
                if cfg.weight_decay != T::ZERO {
                    gi += cfg.weight_decay * p[i];
                }
                slot.m[i] = cfg.beta1 * slot.m[i] + (one - cfg.beta1) * gi;
                slot.v[i] = cfg.beta2 * slot.v[i] + (one - cfg.beta2) * gi * gi;
                if slot.v[i] > slot.v_max[i] {
                    slot.v_max[i] = slot.v[i];
                }
                let m_hat = slot.m[i] / bc_m;
                let v_hat = slot.v_max[i] / bc_v;
                p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        });
        Ok(())
    }
}

fn pow<T: Scalar>(base: T, exp: u64) -> T {
    let mut acc = T::ONE;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

/// Outcome of feeding one epoch's validation loss to [`EarlyStopping`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopUpdate {
    /// Strict improvement: record a checkpoint of the current model.
    Improved,
    /// No improvement but patience not yet exhausted.
    NoImprovement,
    /// Patience exhausted: stop and fall back to the best checkpoint.
    Stop,
}

/// Tracks the best validation loss and how long since it improved.
#[derive(Clone, Debug)]
pub struct EarlyStopping<T> {
    patience: usize,
    best: Option<T>,
    best_epoch: usize,
    since_improvement: usize,
}

impl<T: Scalar> EarlyStopping<T> {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    pub fn best_loss(&self) -> Option<T> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Strict decrease resets the counter; otherwise it increments and the
    /// run stops once it reaches the patience.
    pub fn update(&mut self, val_loss: T, epoch: usize) -> StopUpdate {
        let improved = match self.best {
            None => true,
            Some(best) => val_loss < best,
        };
        if improved {
            self.best = Some(val_loss);
            self.best_epoch = epoch;
            self.since_improvement = 0;
            StopUpdate::Improved
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                StopUpdate::Stop
            } else {
                StopUpdate::NoImprovement
            }
        }
    }
}
