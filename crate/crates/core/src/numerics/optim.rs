use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor2D;

/// Half-cosine decay from `base_lr` at step 0 to `floor` at `total_steps`.
/// Steps past the horizon clamp to `floor`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64, floor: f64) -> f64 {
    let total = total_steps.max(1);
    if step >= total {
        return floor;
    }
    let progress = step as f64 / total as f64;
    floor + 0.5 * (base_lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay coefficient, applied to the value as `p ← p(1 − lr·wd)`.
    pub weight_decay: f64,
    pub total_steps: u64,
    pub lr_floor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            total_steps: 1,
            lr_floor: 0.0,
        }
    }
}

/// Adam with decoupled weight decay and a cosine learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor2D>,
    pub second_moment: Vec<Tensor2D>,
    /// Number of completed updates.
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor2D::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first_moment: zeros(),
            second_moment: zeros(),
            step: 0,
        }
    }

    /// Learning rate used by the next update.
    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.step, self.config.total_steps, self.config.base_lr, self.config.lr_floor)
    }

    /// Applies one update from the gradients held in `store`. Frozen
    /// parameters are left untouched. Returns the learning rate used.
    pub fn step(&mut self, store: &mut ParamStore) -> f64 {
        let lr = self.current_lr();
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let decay = 1.0 - lr * c.weight_decay;
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        lr
    }
}
