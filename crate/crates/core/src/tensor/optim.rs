//! Adaptive-moment optimizer.

use super::params::ParamStore;
use super::{Result, Tensor, TensorError};

/// Adam state: per-parameter first/second moment accumulators and a strictly
/// increasing step counter. The default learning rate is 1e-5, the one
/// training rate the problem setting fixes; everything else is convention.
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(learning_rate: f64, store: &ParamStore) -> Self {
        let m = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn moments(&self, index: usize) -> (&Tensor, &Tensor) {
        (&self.m[index], &self.v[index])
    }

    pub fn set_moments(&mut self, index: usize, m: Tensor, v: Tensor) {
        self.m[index] = m;
        self.v[index] = v;
    }

    /// One update over every trainable parameter. Gradients are validated
    /// (a NaN gradient is an error naming the parameter), consumed, and
    /// zeroed; the step counter increments.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            if !store.grad(id).data().iter().all(|v| v.is_finite()) {
                return Err(TensorError::NonFiniteGradient {
                    name: store.name(id).to_string(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let idx = id.index();
            let grad = store.grad(id).data().to_vec();
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let p = store.value_mut(id).data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn store_with(v: f64) -> (ParamStore, crate::tensor::ParamId) {
        let mut s = ParamStore::new();
        let id = s.register("x", Tensor::from_vec(vec![1], vec![v]).unwrap());
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut store, id) = store_with(1.5);
        let mut adam = AdamState::new(1e-2, &store);
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(id).data(), &[1.5]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (mut store, id) = store_with(2.0);
        let mut adam = AdamState::new(0.0, &store);
        // make a nonzero gradient: loss = x^2 has grad 2x
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let back = g.backward(loss).unwrap();
        store.accumulate(&back.param_grads);
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(id).data(), &[2.0]);
    }

    #[test]
    fn descends_on_quadratic() {
        // f(x) = x^2 from x = 1: |x| must decrease monotonically
        let (mut store, id) = store_with(1.0);
        let mut adam = AdamState::new(1e-2, &store);
        let mut prev = 1.0f64;
        for _ in 0..200 {
            let mut g = Graph::new();
            let x = g.param(&store, id);
            let sq = g.mul(x, x).unwrap();
            let loss = g.sum(sq).unwrap();
            let back = g.backward(loss).unwrap();
            store.accumulate(&back.param_grads);
            adam.step(&mut store).unwrap();
            let cur = store.value(id).data()[0].abs();
            assert!(cur <= prev + 1e-12, "|x| grew: {prev} -> {cur}");
            prev = cur;
        }
        assert!(prev < 0.5);
    }

    #[test]
    fn nan_gradient_is_rejected_by_name() {
        let (mut store, id) = store_with(1.0);
        let mut adam = AdamState::new(1e-2, &store);
        let mut bad = Tensor::zeros(&[1]);
        bad.data_mut()[0] = f64::NAN;
        store.accumulate(&[(id, bad)]);
        let err = adam.step(&mut store).unwrap_err();
        assert!(err.to_string().contains('x'));
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let (mut store, id) = store_with(0.7);
            let mut adam = AdamState::new(3e-3, &store);
            for _ in 0..50 {
                let mut g = Graph::new();
                let x = g.param(&store, id);
                let sq = g.mul(x, x).unwrap();
                let loss = g.sum(sq).unwrap();
                let back = g.backward(loss).unwrap();
                store.accumulate(&back.param_grads);
                adam.step(&mut store).unwrap();
            }
            store.value(id).data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
