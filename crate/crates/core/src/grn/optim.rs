use serde::{Deserialize, Serialize};

use super::model::{GrnGrads, GrnParams};
use super::GrnError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;

/// AdamW moments, one buffer per trainable tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl OptState {
    pub fn for_sizes(sizes: &[usize], weight_decay: f64, eps: f64) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            weight_decay,
            eps,
        }
    }

    pub fn new(params: &GrnParams, weight_decay: f64, eps: f64) -> Self {
        let mut p = params.clone();
        let sizes: Vec<usize> = p.tensors_mut().iter().map(|(t, _)| t.len()).collect();
        Self::for_sizes(&sizes, weight_decay, eps)
    }
}

/// One decoupled-decay Adam step over matching tensor lists:
/// `θ ← θ − η·(m̂/(√v̂ + ε) + λ·θ)`, with `λ` applied only where the decay
/// flag is set.
pub fn adamw_update(
    tensors: Vec<(&mut [f64], bool)>,
    grads: &[&[f64]],
    state: &mut OptState,
    lr: f64,
) -> Result<(), GrnError> {
    if tensors.len() != grads.len() || tensors.len() != state.m.len() {
        return Err(GrnError::ShapeMismatch(format!(
            "{} tensors, {} gradients, {} moment buffers",
            tensors.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, ((t, _), g)) in tensors.iter().zip(grads).enumerate() {
        if t.len() != g.len() || t.len() != state.m[k].len() {
            return Err(GrnError::ShapeMismatch(format!("tensor {k}")));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - BETA1.powf(state.t as f64);
    let bc2 = 1.0 - BETA2.powf(state.t as f64);
    for (k, (theta, decay)) in tensors.into_iter().enumerate() {
        let lambda = if decay { state.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..theta.len() {
            let g = grads[k][i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            // Same as θ − η(m̂/(√v̂+ε) + λθ), arranged so g = 0 is an exact rescale.
            theta[i] = theta[i] * (1.0 - lr * lambda) - lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

pub fn adamw_step(params: &mut GrnParams, grads: &GrnGrads, state: &mut OptState, lr: f64) -> Result<(), GrnError> {
    adamw_update(params.tensors_mut(), &grads.tensors(), state, lr)?;
    params.generation += 1;
    Ok(())
}
