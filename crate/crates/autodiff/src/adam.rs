use crate::error::{AdError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f32) -> Self {
        let m: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, v: m.clone(), m }
    }
}

/// Scale `grads` so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f32) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.data().iter()).map(|&x| (x as f64) * (x as f64)).sum();
    let norm = sq.sqrt();
    if norm > max_norm as f64 {
        let s = (max_norm as f64 / norm) as f32;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(AdError::Invalid(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(AdError::ShapeMismatch { op: "adam_step", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
        }
        if !g.all_finite() {
            return Err(AdError::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - (state.beta1 as f64).powf(t);
    let bc2 = 1.0 - (state.beta2 as f64).powf(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps as f64, state.lr as f64);
    for (idx, g) in grads.iter().enumerate() {
        let p = params.tensor_mut(idx);
        let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi as f64 / bc1;
            let vhat = *vi as f64 / bc2;
            *pi -= (lr * mhat / (vhat.sqrt() + eps)) as f32;
        }
    }
    Ok(())
}
