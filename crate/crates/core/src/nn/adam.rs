use std::collections::BTreeMap;

use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Learning rate 1e-5 with the usual moment decay rates.
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<ParamId, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    /// Applies one update to every parameter in `grads` and advances the
    /// step counter.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = T::of(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for (id, g) in grads {
            if !store.is_trainable(*id) {
                continue;
            }
            let shape = store.get(*id).shape().to_vec();
            if g.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "gradient for {} has shape {:?}, expected {shape:?}",
                    store.name(*id),
                    g.shape()
                )));
            }
            let (m, v) = self
                .moments
                .entry(*id)
                .or_insert_with(|| (Tensor::zeros(&shape), Tensor::zeros(&shape)));
            let mut p = (**store.get(*id)).clone();
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
            store.set(*id, p)?;
        }
        Ok(())
    }

    pub fn moments(&self, id: ParamId) -> Option<&(Tensor<T>, Tensor<T>)> {
        self.moments.get(&id)
    }

    pub fn set_moments(&mut self, id: ParamId, m: Tensor<T>, v: Tensor<T>) {
        self.moments.insert(id, (m, v));
    }

    pub fn moment_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.moments.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.3, -7.0, 1e-3] {
            let mut s = ParamStore::<f64>::new();
            let id = s.add("x", Tensor::scalar(1.0), true);
            let cfg = AdamConfig { eps: 0.0, ..AdamConfig::default() };
            let mut opt = Adam::new(cfg).unwrap();
            opt.step(&mut s, &[(id, Tensor::scalar(g))]).unwrap();
            let moved = s.get(id).item() - 1.0;
            assert!((moved + cfg.lr * f64::signum(g)).abs() < 1e-15);
            assert_eq!(opt.step, 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("x", Tensor::full(&[3], 0.5), true);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        for _ in 0..3 {
            opt.step(&mut s, &[(id, Tensor::zeros(&[3]))]).unwrap();
        }
        assert_eq!(s.get(id).data(), &[0.5; 3]);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = AdamConfig { beta1: 1.0, ..AdamConfig::default() };
        assert!(Adam::<f32>::new(bad).is_err());
        assert!(Adam::<f32>::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }).is_err());
    }
}
