use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::Tensor;

pub const BETA1: f32 = 0.9;
pub const BETA2: f32 = 0.999;
pub const EPSILON: f32 = 1e-8;
pub const DEFAULT_LR: f32 = 1e-3;
pub const DEFAULT_WEIGHT_DECAY: f32 = 1e-5;

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, params: &[&Tensor]) -> Result<()> {
        if self.first.is_empty() && self.step == 0 {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() || self.second.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for ((m, v), p) in self.first.iter().zip(&self.second).zip(params) {
            if m.len() != p.numel() || v.len() != p.numel() {
                return Err(Error::Dimension("moment / parameter size mismatch".into()));
            }
        }
        Ok(())
    }
}

/// One Adam update with bias correction. Weight decay is an L2 term added
/// to the gradient before the moment updates.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f32,
    weight_decay: f32,
) -> Result<()> {
    let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
    adam_step_refs(&mut refs, grads, state, lr, weight_decay)
}

/// Adam over the trainable entries of a store, with gradients given in
/// `ParamStore::trainable_ids` order.
pub fn adam_step_store(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f32,
    weight_decay: f32,
) -> Result<()> {
    let ids = store.trainable_ids();
    let mut taken: Vec<Tensor> = ids
        .iter()
        .map(|&id| std::mem::replace(store.get_mut(id), Tensor::scalar(0.0)))
        .collect();
    let result = adam_step(&mut taken, grads, state, lr, weight_decay);
    for (id, t) in ids.into_iter().zip(taken) {
        *store.get_mut(id) = t;
    }
    result
}

fn adam_step_refs(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f32,
    weight_decay: f32,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Argument(format!("learning rate {lr} must be positive")));
    }
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "parameter {:?} with gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    {
        let views: Vec<&Tensor> = params.iter().map(|p| &**p).collect();
        state.ensure(&views)?;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - (BETA1 as f64).powi(t);
    let bc2 = 1.0 - (BETA2 as f64).powi(t);
    let (bc1, bc2) = (bc1 as f32, bc2 as f32);

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i] + weight_decay * pd[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        if pd.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("adam_step"));
        }
    }
    Ok(())
}
