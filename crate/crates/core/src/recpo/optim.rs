//! Adam with decoupled weight decay and a linear warm-up schedule.

use crate::model::PolicyParams;
use crate::scalar::Scalar;

use super::config::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F: Scalar> {
    m: PolicyParams<F>,
    v: PolicyParams<F>,
    /// Whether each tensor receives weight decay (matrices only).
    decay: Vec<bool>,
    steps: u64,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(params: &PolicyParams<F>, cfg: &TrainConfig) -> Self {
        AdamW {
            m: params.zeros_like(),
            v: params.zeros_like(),
            decay: params.matrix_mask(),
            steps: 0,
            learning_rate: cfg.learning_rate,
            warmup_steps: cfg.warmup_steps,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Learning rate of the next update.
    pub fn current_lr(&self) -> f64 {
        let done = self.steps as f64 + 1.0;
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * (done / self.warmup_steps as f64).min(1.0)
        }
    }

    /// One descent step along `grads` (the gradient of a loss to minimize).
    /// Bumps the parameter version.
    pub fn step(&mut self, params: &mut PolicyParams<F>, grads: &PolicyParams<F>) {
        let lr = self.current_lr();
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let decay = self.weight_decay;
        let eps = self.epsilon;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(&self.decay);
        for ((((p, g), m), v), &decays) in tensors {
            for i in 0..p.len() {
                let gi = g[i].f64();
                let mi = b1 * m[i].f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].f64() + (1.0 - b2) * gi * gi;
                m[i] = F::of(mi);
                v[i] = F::of(vi);
                let mut pi = p[i].f64();
                if decays {
                    pi -= lr * decay * pi;
                }
                pi -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                p[i] = F::of(pi);
            }
        }
        params.version += 1;
    }
}
