use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, aligned with the store's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = (0..store.len())
            .map(|i| Tensor::zeros(store.get(super::ParamId(i)).shape()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Every registered parameter must have a
/// gradient slot, even if it is all zeros.
pub fn adam_step(store: &mut ParamStore, grads: &Grads, state: &mut AdamState) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Contract(format!(
            "gradient set covers {} parameters, store has {}",
            grads.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        if grads.get(id).is_none() {
            return Err(Error::Contract(format!(
                "missing gradient for parameter `{}`",
                store.name(id)
            )));
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for id in store.ids() {
        let g = grads.get(id).unwrap().values();
        let m = state.m[id.index()].values_mut();
        let v = state.v[id.index()].values_mut();
        let p = store.get_mut(id).values_mut();
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.register_uniform("a", &[3, 2], 2, &mut rng).unwrap();
        s.register_uniform("b", &[4], 4, &mut rng).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store();
        let before = s.clone();
        let mut st = AdamState::new(&s, AdamConfig::default());
        let g = Grads::zeros_like(&s);
        adam_step(&mut s, &g, &mut st).unwrap();
        assert_eq!(s, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_unit_step_moves_by_lr() {
        let mut s = store();
        let before = s.clone();
        let mut st = AdamState::new(&s, AdamConfig::default());
        let mut g = Grads::zeros_like(&s);
        for id in s.ids() {
            g.slot_mut(id).iter_mut().for_each(|x| *x = 1.0);
        }
        adam_step(&mut s, &g, &mut st).unwrap();
        // m̂ = v̂ = 1, so the step is lr / (1 + eps)
        for id in s.ids() {
            for (a, b) in s.get(id).values().iter().zip(before.get(id).values()) {
                assert!(((b - a) - 1e-3).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut s = store();
        let mut st = AdamState::new(&s, AdamConfig::default());
        let mut g = Grads::empty(&s);
        g.set(s.id("a").unwrap(), Tensor::zeros(&[3, 2]));
        let err = adam_step(&mut s, &g, &mut st).unwrap_err();
        assert!(err.to_string().contains("`b`"));
    }

    #[test]
    fn identical_calls_are_bitwise_identical() {
        let run = || {
            let mut s = store();
            let mut st = AdamState::new(&s, AdamConfig::default());
            let mut g = Grads::zeros_like(&s);
            for id in s.ids() {
                g.slot_mut(id)
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, x)| *x = (i as f64).sin());
            }
            for _ in 0..3 {
                adam_step(&mut s, &g, &mut st).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }
}
