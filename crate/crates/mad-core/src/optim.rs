//! Adam optimizer over a [`ParamStore`].
//!
//! Standard bias-corrected Adam:
//!
//! ```text
//! m <- b1*m + (1-b1)*g          m_hat = m / (1 - b1^t)
//! v <- b2*v + (1-b2)*g^2        v_hat = v / (1 - b2^t)
//! p <- p - lr * m_hat / (sqrt(v_hat) + eps)
//! ```
//!
//! Moments are keyed by parameter name and created lazily, so parameters can
//! be registered before or after the optimizer state.

use std::collections::BTreeMap;

use crate::error::{MadError, Result};
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Number of steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }
}

/// Apply one Adam update to every unfrozen parameter in the store.
///
/// Gradients are left untouched; the caller decides when to zero them.
/// A non-finite gradient aborts the step with the offending parameter named.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        let grad = store.grad(name)?;
        for &g in grad.data() {
            if !g.is_finite() {
                return Err(MadError::NonFinite {
                    context: format!("gradient of {name:?}"),
                });
            }
        }
    }

    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);

    for name in &names {
        if store.is_frozen(name) {
            continue;
        }
        let shape = store.value(name)?.shape().to_vec();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(&shape));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(&shape));

        let (value, grad) = store.value_mut_and_grad(name)?;
        let p = value.data_mut();
        let g = grad.data();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * g[i];
            vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with_scalar(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("p", Tensor::scalar(value).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With unit gradient, bias correction makes the first update
        // lr * g / (|g| + eps), i.e. one learning rate in magnitude.
        let mut store = store_with_scalar(0.0);
        store.grad_mut("p").unwrap().data_mut()[0] = 1.0;
        let mut adam = AdamState::new(0.005);
        adam_step(&mut store, &mut adam).unwrap();
        let p = store.value("p").unwrap().item();
        assert!((p - (-0.005)).abs() < 1e-6, "p = {p}");
        assert_eq!(adam.t(), 1);
    }

    #[test]
    fn zero_gradients_are_a_no_op_for_all_t() {
        let mut store = store_with_scalar(1.25);
        let mut adam = AdamState::new(0.1);
        for _ in 0..5 {
            adam_step(&mut store, &mut adam).unwrap();
            assert_eq!(store.value("p").unwrap().item(), 1.25);
        }
        assert_eq!(adam.t(), 5);
    }

    #[test]
    fn identical_histories_give_bit_identical_parameters() {
        let run = || {
            let mut store = store_with_scalar(0.5);
            let mut adam = AdamState::new(0.01);
            for step in 0..20 {
                store.grad_mut("p").unwrap().data_mut()[0] = (step as f64 * 0.37).sin();
                adam_step(&mut store, &mut adam).unwrap();
                store.zero_grads();
            }
            store.value("p").unwrap().item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn non_finite_gradient_is_an_error_naming_the_param() {
        let mut store = store_with_scalar(0.0);
        store.grad_mut("p").unwrap().data_mut()[0] = f64::NAN;
        let mut adam = AdamState::new(0.01);
        let err = adam_step(&mut store, &mut adam).unwrap_err();
        assert!(err.to_string().contains("\"p\""), "{err}");
        // A failed step must not advance time.
        assert_eq!(adam.t(), 0);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = store_with_scalar(2.0);
        store.freeze("p").unwrap();
        store.grad_mut("p").unwrap().data_mut()[0] = 1.0;
        let mut adam = AdamState::new(0.1);
        adam_step(&mut store, &mut adam).unwrap();
        assert_eq!(store.value("p").unwrap().item(), 2.0);
    }

    #[test]
    fn grads_survive_the_step() {
        let mut store = store_with_scalar(0.0);
        store.grad_mut("p").unwrap().data_mut()[0] = 3.0;
        let mut adam = AdamState::new(0.01);
        adam_step(&mut store, &mut adam).unwrap();
        assert_eq!(store.grad("p").unwrap().item(), 3.0);
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize (p - 3)^2 from 0; Adam should get close within a few
        // hundred steps at lr 0.05.
        let mut store = store_with_scalar(0.0);
        let mut adam = AdamState::new(0.05);
        for _ in 0..400 {
            let p = store.value("p").unwrap().item();
            store.grad_mut("p").unwrap().data_mut()[0] = 2.0 * (p - 3.0);
            adam_step(&mut store, &mut adam).unwrap();
            store.zero_grads();
        }
        let p = store.value("p").unwrap().item();
        assert!((p - 3.0).abs() < 0.05, "p = {p}");
    }
}
