use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam over a fixed subset of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    params: Vec<ParamId>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore, params: Vec<ParamId>) -> Self {
        let first = params
            .iter()
            .map(|&p| Tensor::zeros(store.value(p).shape()))
            .collect::<Vec<_>>();
        let second = first.clone();
        Adam {
            config,
            params,
            first,
            second,
            step: 0,
        }
    }

    /// Optimizer over every parameter currently in the store.
    pub fn all(config: AdamConfig, store: &ParamStore) -> Self {
        Adam::new(config, store, store.ids().collect())
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// One bias-corrected Adam update using the store's current gradients.
    ///
    /// Fails without touching any value if a gradient entry is not finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for &p in &self.params {
            if let Some(i) = store.grad(p).data().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    name: store.name(p).to_string(),
                    index: i,
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (k, &p) in self.params.iter().enumerate() {
            let grad = store.grad(p).data().to_vec();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            let value = store.value_mut(p).data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut store, w) = scalar_store(0.7);
        let mut adam = Adam::all(AdamConfig::default(), &store);
        for _ in 0..3 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(w).item(), 0.7);
        assert_eq!(adam.steps(), 3);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (mut store, w) = scalar_store(0.7);
        store.grad_mut(w).data_mut()[0] = 3.0;
        let mut adam = Adam::all(AdamConfig::with_lr(0.0), &store);
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(w).item(), 0.7);
    }

    #[test]
    fn two_step_trace_matches_hand_computation() {
        // Gradients 0.5 then -1.0 on a scalar starting at 1.0, lr 0.1.
        // Step 1: m = 0.05, v = 0.00025, m̂ = 0.5, v̂ = 0.25 → Δ = 0.1·0.5/(0.5+1e-8)
        // Step 2: m = 0.045 - 0.1 = -0.055, v = 0.00024975 + 0.001 = 0.00124975,
        //         m̂ = -0.055/0.19, v̂ = 0.00124975/0.001999
        let (mut store, w) = scalar_store(1.0);
        let mut adam = Adam::all(AdamConfig::with_lr(0.1), &store);
        store.grad_mut(w).data_mut()[0] = 0.5;
        adam.step(&mut store).unwrap();
        let after1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((store.value(w).item() - after1).abs() < 1e-15);
        store.grad_mut(w).data_mut()[0] = -1.0;
        adam.step(&mut store).unwrap();
        let m_hat = -0.055 / (1.0 - 0.81);
        let v_hat: f64 = 0.001_249_75 / (1.0 - 0.998_001);
        let after2 = after1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((store.value(w).item() - after2).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut store, w) = scalar_store(1.0);
        store.grad_mut(w).data_mut()[0] = f64::NAN;
        let mut adam = Adam::all(AdamConfig::default(), &store);
        match adam.step(&mut store) {
            Err(Error::NonFiniteGradient { name, index }) => {
                assert_eq!(name, "w");
                assert_eq!(index, 0);
            }
            other => panic!("expected NaN diagnostic, got {other:?}"),
        }
        assert_eq!(store.value(w).item(), 1.0);
        assert_eq!(adam.steps(), 0);
    }
}
