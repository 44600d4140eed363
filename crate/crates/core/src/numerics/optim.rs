use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with optional decoupled weight decay (AdamW when `weight_decay > 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn adam(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        AdamState {
            weight_decay,
            ..AdamState::adam(lr)
        }
    }

    /// One update over a list of parameter tensors and matching gradients.
    ///
    /// Nothing is modified if any gradient is non-finite or shapes disagree.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::invalid(format!(
                    "tensor {i}: {} parameters but {} gradients",
                    p.len(),
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("gradient tensor {i}")));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != grads.len()
            || self.first_moment.iter().zip(grads).any(|(m, g)| m.len() != g.len())
        {
            return Err(Error::invalid(
                "parameter layout changed between optimizer steps",
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                if self.weight_decay != 0.0 {
                    *pi *= decay;
                }
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    state.step(params, grads)
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without a strict improvement of the best loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::invalid(format!("plateau factor must be in (0,1), got {factor}")));
        }
        if !(min_lr >= 0.0) {
            return Err(Error::invalid(format!("minimum lr must be >= 0, got {min_lr}")));
        }
        Ok(PlateauScheduler {
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch loss and returns the learning rate to use next.
    pub fn step(&mut self, lr: f64, epoch_loss: f64) -> f64 {
        if epoch_loss < self.best {
            self.best = epoch_loss;
            self.bad_epochs = 0;
            return lr.max(self.min_lr);
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr.max(self.min_lr)
    }
}

/// Free-function form of [`PlateauScheduler::step`].
pub fn plateau_step(sched: &mut PlateauScheduler, lr: f64, epoch_loss: f64) -> f64 {
    sched.step(lr, epoch_loss)
}
