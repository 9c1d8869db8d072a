//! Adam with bias correction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

// Float provides sqrt/powi on f64 in no_std builds.
#[allow(unused_imports)]
use num_traits::Float;

use crate::backbone::ParamStore;
use crate::element::Element;
use crate::tensor::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Optimizer state keyed by parameter name. Parameters without a gradient
/// (frozen or unused this step) are left untouched, including their moments.
pub struct Adam<T: Element> {
    pub cfg: AdamConfig,
    state: BTreeMap<String, Moments<T>>,
    step_count: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            state: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// Apply one update to every trainable parameter carrying a gradient.
    /// A non-finite gradient aborts the step before any parameter moves.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let trainable = store.trainable();
        let mut updates: Vec<(String, &Tensor<T>, Vec<T>)> = Vec::new();
        for (name, tensor) in &trainable {
            if let Some(grad) = tensor.grad() {
                if !grad.iter().all(|g| g.is_finite()) {
                    return Err(Error::NonFinite { op: "adam_step" });
                }
                updates.push((name.clone(), tensor, grad));
            }
        }
        if updates.is_empty() {
            return Ok(());
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::cast(self.cfg.beta1);
        let b2 = T::cast(self.cfg.beta2);
        let one = T::one();
        let corr1 = one - b1.powi(t);
        let corr2 = one - b2.powi(t);
        let lr = T::cast(self.cfg.learning_rate);
        let eps = T::cast(self.cfg.epsilon);

        for (name, tensor, grad) in updates {
            let moments = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: alloc::vec![T::zero(); grad.len()],
                v: alloc::vec![T::zero(); grad.len()],
            });
            let mut next = tensor.data().to_vec();
            for i in 0..grad.len() {
                let g = grad[i];
                moments.m[i] = b1 * moments.m[i] + (one - b1) * g;
                moments.v[i] = b2 * moments.v[i] + (one - b2) * g * g;
                let m_hat = moments.m[i] / corr1;
                let v_hat = moments.v[i] / corr2;
                next[i] = next[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            let shape = tensor.shape().to_vec();
            store.set(&name, Tensor::from_vec(&shape, next)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: Vec<f64>) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.insert_param(name, Tensor::from_vec(&[values.len()], values).unwrap());
        store
    }

    fn set_grad(store: &ParamStore<f64>, name: &str, grad: Vec<f64>) {
        store.get(name).unwrap().accumulate_grad(grad);
    }

    #[test]
    fn first_step_moves_by_roughly_lr_times_sign() {
        let mut store = store_with("p", alloc::vec![1.0]);
        set_grad(&store, "p", alloc::vec![2.0]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store).unwrap();
        let p = store.get("p").unwrap().data()[0];
        // bias-corrected first step: 1 - lr * 2 / (2 + eps') with eps tiny
        assert!((p - 0.9999).abs() < 1e-7, "{p}");
    }

    #[test]
    fn zero_gradient_leaves_parameter_bitwise_unchanged() {
        let mut store = store_with("p", alloc::vec![0.123456789]);
        set_grad(&store, "p", alloc::vec![0.0]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store).unwrap();
        assert_eq!(store.get("p").unwrap().data()[0], 0.123456789);
    }

    #[test]
    fn frozen_parameter_never_moves() {
        let mut store = store_with("p", alloc::vec![1.0]);
        store.insert_param("q", Tensor::from_vec(&[1], alloc::vec![5.0]).unwrap());
        store.set_trainable(|name| name == "q");
        // a frozen (detached) parameter accumulates no gradient in backward;
        // even a manually injected one is ignored because it is not listed
        set_grad(&store, "q", alloc::vec![1.0]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store).unwrap();
        assert_eq!(store.get("p").unwrap().data()[0], 1.0);
        assert!(store.get("q").unwrap().data()[0] < 5.0);
    }

    #[test]
    fn nan_gradient_aborts_the_step() {
        let mut store = store_with("p", alloc::vec![1.0]);
        set_grad(&store, "p", alloc::vec![f64::NAN]);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(
            adam.step(&mut store),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(store.get("p").unwrap().data()[0], 1.0);
    }

    #[test]
    fn moments_decay_toward_zero_on_zero_gradients() {
        let mut store = store_with("p", alloc::vec![1.0]);
        let mut adam = Adam::new(AdamConfig::default());
        set_grad(&store, "p", alloc::vec![1.0]);
        adam.step(&mut store).unwrap();
        let m_after_first = adam.state.get("p").unwrap().m[0];
        for _ in 0..5 {
            store.clear_grads();
            set_grad(&store, "p", alloc::vec![0.0]);
            adam.step(&mut store).unwrap();
        }
        let m_later = adam.state.get("p").unwrap().m[0];
        assert!(m_later.abs() < m_after_first.abs());
    }
}
