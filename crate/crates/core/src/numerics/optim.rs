use super::param::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers follow the store's parameter order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held in `store`.
    ///
    /// Gradients are validated before anything is written, so a rejected step
    /// leaves both the parameters and the moment buffers untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        for p in store.iter() {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {}",
                    p.name
                )));
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
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let param = store.get_mut(id);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let grads = param.grad.values().to_vec();
            for (k, (w, g)) in param.value.values_mut().iter_mut().zip(grads).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![w])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut store = scalar_store(0.7);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &store);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.iter().next().unwrap().value.values(), &[0.7]);
    }

    #[test]
    fn unit_gradient_first_step_moves_by_lr() {
        // m̂ = 1 and v̂ = 1 after bias correction, so Δw = -lr·1/(1+eps)
        let mut store = scalar_store(0.0);
        store.get_mut(store.id("w").unwrap()).grad = Tensor::vector(vec![1.0]);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &store);
        adam.step(&mut store).unwrap();
        let w = store.iter().next().unwrap().value.values()[0];
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut store = scalar_store(1.0);
        let id = store.id("w").unwrap();
        let mut adam = Adam::new(AdamConfig::with_lr(0.05), &store);
        for _ in 0..200 {
            let w = store.value(id).values()[0];
            store.get_mut(id).grad = Tensor::vector(vec![2.0 * w]);
            adam.step(&mut store).unwrap();
        }
        let w = store.value(id).values()[0];
        assert!(w.abs() < 0.05, "{w}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = scalar_store(1.0);
        let id = store.id("w").unwrap();
        store.get_mut(id).grad = Tensor::vector(vec![f64::NAN]);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let msg = adam.step(&mut store).unwrap_err().to_string();
        assert!(msg.contains('w'));
        assert_eq!(store.value(id).values(), &[1.0]);
        assert_eq!(adam.steps_taken(), 0);
    }
}
