use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Adam with decoupled weight decay.
///
/// Decay scales the parameter directly before the moment-based update and
/// never enters the moment estimates.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let first: Vec<Tensor> = store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamW {
            config,
            second: first.clone(),
            first,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if m.shape() != p.value.shape() {
                return Err(Error::Shape(format!("moment shape mismatch for {}", p.name)));
            }
            let decay = 1.0 - lr * weight_decay;
            let md = m.data_mut();
            let vd = v.data_mut();
            for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(md).zip(vd) {
                *w *= decay;
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + epsilon);
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        s
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut s = store(&[1.0, -2.0, 0.5]);
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        opt.step(&mut s).unwrap();
        let f = 1.0 - 0.01 * 0.1;
        assert_eq!(s.params()[0].value.data(), &[1.0 * f, -2.0 * f, 0.5 * f]);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut s = store(&[1.0, -2.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        opt.step(&mut s).unwrap();
        assert_eq!(s.params()[0].value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_unit_gradient_step_moves_by_lr() {
        // With g = 1 at t = 1 the bias-corrected moments are both exactly 1,
        // so the update is lr / (1 + eps) per entry.
        let mut s = store(&[0.3, -0.7, 2.0]);
        s.params_mut()[0].grad.fill(1.0);
        let cfg = AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        opt.step(&mut s).unwrap();
        let expected = 1e-3 / (1.0 + 1e-8);
        for (w, w0) in s.params()[0].value.data().iter().zip([0.3, -0.7, 2.0]) {
            assert!(((w0 - w) - expected).abs() < 1e-15);
        }
        assert!(s.params()[0].grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(opt.step_count(), 1);
    }
}
