//! Adam with bias correction and decoupled weight decay.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// One moment buffer per parameter tensor, with the given lengths.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update over named tensors. Fails without modifying anything if a
/// gradient is non-finite or shapes disagree.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    names: &[&str],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::DimensionMismatch { expected: state.first.len(), got: params.len() });
    }
    for (i, g) in grads.iter().enumerate() {
        if g.len() != params[i].len() || g.len() != state.first[i].len() {
            return Err(Error::DimensionMismatch { expected: params[i].len(), got: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            let name = names.get(i).copied().unwrap_or("parameter");
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for k in 0..p.len() {
            let g = grads[i][k];
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * weight_decay * p[k] + lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(())
}
