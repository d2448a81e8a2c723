//! Adam with a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, shapes: &[Vec<T>]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: shapes.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update of every layer whose `trainable` flag is set.
    pub fn update(&mut self, params: &mut [Vec<T>], grads: &[Vec<T>], trainable: &[bool]) -> Result<()> {
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(self.lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(self.eps);
        for (layer, p) in params.iter_mut().enumerate() {
            if !trainable[layer] {
                continue;
            }
            let (m, v, g) = (&mut self.m[layer], &mut self.v[layer], &grads[layer]);
            for k in 0..p.len() {
                m[k] = b1 * m[k] + one_b1 * g[k];
                v[k] = b2 * v[k] + one_b2 * g[k] * g[k];
                p[k] -= step_size * m[k] / ((v[k] * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate after `patience` epochs without validation
/// improvement, never going below `min_lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauSchedule {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    #[serde(skip)]
    best: Option<f64>,
    #[serde(skip)]
    wait: usize,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 5,
            min_lr: 1e-5,
            best: None,
            wait: 0,
        }
    }
}

impl PlateauSchedule {
    /// Feed one epoch's validation loss; returns the learning rate to use next.
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        if self.best.map_or(true, |b| val_loss < b) {
            self.best = Some(val_loss);
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // bias correction makes the first step exactly lr·g/(|g|+ε')
        let mut params = vec![vec![1.0f64, -2.0, 0.5]];
        let grads = vec![vec![0.3, -4.0, 0.0]];
        let mut adam = Adam::new(1e-3, &params);
        adam.update(&mut params, &grads, &[true]).unwrap();
        assert!((params[0][0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((params[0][1] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(params[0][2], 0.5);
    }

    #[test]
    fn matches_reference_recurrence() {
        let mut params = vec![vec![0.0f64]];
        let mut adam = Adam::new(0.1, &params);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * (x - 3.0);
            let grad = vec![vec![2.0 * (params[0][0] - 3.0)]];
            adam.update(&mut params, &grad, &[true]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((params[0][0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_nan_is_rejected() {
        let mut params = vec![vec![0.25f32, -1.0]];
        let mut adam = Adam::new(1e-3, &params);
        adam.update(&mut params, &[vec![0.0, 0.0]], &[true]).unwrap();
        assert_eq!(params[0], vec![0.25, -1.0]);
        assert!(adam.update(&mut params, &[vec![f32::NAN, 0.0]], &[true]).is_err());
    }

    #[test]
    fn frozen_layers_do_not_move() {
        let mut params = vec![vec![1.0f32], vec![1.0f32]];
        let mut adam = Adam::new(0.1, &params);
        adam.update(&mut params, &[vec![1.0], vec![1.0]], &[false, true]).unwrap();
        assert_eq!(params[0][0], 1.0);
        assert!(params[1][0] < 1.0);
    }

    #[test]
    fn plateau_halves_and_floors() {
        let mut s = PlateauSchedule::default();
        let mut lr = 1e-3;
        lr = s.observe(1.0, lr);
        for _ in 0..5 {
            lr = s.observe(2.0, lr);
        }
        assert_eq!(lr, 5e-4);
        lr = s.observe(0.5, lr);
        assert_eq!(lr, 5e-4);
        for _ in 0..100 {
            lr = s.observe(9.0, lr);
        }
        assert_eq!(lr, 1e-5);
    }
}
