//! Adam optimizer with bias correction.

use std::collections::HashMap;

use crate::error::{Result, SluError};
use crate::numerics::graph::Mat;
use crate::numerics::params::ParamStore;

/// Shared hyperparameters. Only the learning rate comes from the training
/// recipe; the betas and eps are the optimizer's standard defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment estimates and step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Mat,
    pub v: Mat,
    pub t: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            m: Mat::zeros((rows, cols)),
            v: Mat::zeros((rows, cols)),
            t: 0,
        }
    }
}

/// One Adam update in place. Increments `state.t`.
pub fn adam_step(
    param: &mut Mat,
    grad: &Mat,
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    if param.dim() != grad.dim() || param.dim() != state.m.dim() {
        return Err(SluError::InvalidArgument(format!(
            "adam_step: shape mismatch (param {:?}, grad {:?}, state {:?})",
            param.dim(),
            grad.dim(),
            state.m.dim()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for ((p, g), (m, v)) in param
        .iter_mut()
        .zip(grad.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Optimizer over a whole parameter store, one state per tensor name.
pub struct Adam {
    pub hp: AdamParams,
    states: HashMap<String, AdamState>,
}

impl Adam {
    pub fn new(hp: AdamParams) -> Self {
        Adam {
            hp,
            states: HashMap::new(),
        }
    }

    /// Apply one step to every (name, grad) pair, optionally after clipping
    /// the global gradient norm to `clip_norm`.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &mut [(String, Mat)],
        clip_norm: Option<f64>,
    ) -> Result<()> {
        if let Some(max_norm) = clip_norm {
            let norm: f64 = grads
                .iter()
                .map(|(_, g)| g.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                for (_, g) in grads.iter_mut() {
                    g.mapv_inplace(|v| v * scale);
                }
            }
        }
        for (name, grad) in grads.iter() {
            let dim = store.get(name).dim();
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamState::new(dim.0, dim.1));
            let mut param = store.get(name).clone();
            adam_step(&mut param, grad, state, &self.hp)?;
            store.set(name, param)?;
        }
        Ok(())
    }
}
