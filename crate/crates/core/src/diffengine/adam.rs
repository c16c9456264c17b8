use crate::scalar::Real;

use super::params::ParamStore;
use super::DiffError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), DiffError> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(DiffError::Shape { op: "adam_step", left: (store.len(), 1), right: (grads.len(), state.m.len()) });
    }
    for (idx, g) in grads.iter().enumerate() {
        let p = store.get_index(idx);
        if g.len() != p.len() {
            return Err(DiffError::Shape { op: "adam_step", left: (p.rows, p.cols), right: (g.len(), 1) });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFiniteGradient(store.name_of(idx).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
    for (idx, g) in grads.iter().enumerate() {
        let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
        let p = &mut store.get_index_mut(idx).data;
        for k in 0..g.len() {
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
