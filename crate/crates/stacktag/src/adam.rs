//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Param;

/// Per-parameter optimizer state: first/second moment estimates and the
/// step counter used for bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update over a parameter list. Gradients must be populated;
/// the caller zeroes them afterwards.
pub fn adam_step(params: &[Param], states: &mut [AdamState], lr: f64) -> Result<()> {
    if params.len() != states.len() {
        return Err(Error::State(format!(
            "{} parameters but {} optimizer states",
            params.len(),
            states.len()
        )));
    }
    for (p, st) in params.iter().zip(states.iter_mut()) {
        let mut t = p.borrow_mut();
        let grad = t
            .grad
            .clone()
            .ok_or_else(|| Error::State("adam_step on parameter with no gradient".into()))?;
        if grad.len() != st.m.len() {
            return Err(Error::State(format!(
                "gradient length {} does not match state length {}",
                grad.len(),
                st.m.len()
            )));
        }
        st.t += 1;
        let bc1 = 1.0 - st.beta1.powi(st.t as i32);
        let bc2 = 1.0 - st.beta2.powi(st.t as i32);
        for i in 0..grad.len() {
            let g = grad[i];
            st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
            st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
            let m_hat = st.m[i] / bc1;
            let v_hat = st.v[i] / bc2;
            t.data[i] -= lr * m_hat / (v_hat.sqrt() + st.epsilon);
        }
    }
    Ok(())
}

/// Reset accumulated gradients on every parameter.
pub fn zero_grads(params: &[Param]) {
    for p in params {
        p.borrow_mut().zero_grad();
    }
}

/// Scale gradients so their global L2 norm does not exceed `max_norm`.
pub fn clip_global_norm(params: &[Param], max_norm: f64) {
    let mut total = 0.0;
    for p in params {
        if let Some(g) = &p.borrow().grad {
            total += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = total.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return;
    }
    let scale = max_norm / norm;
    for p in params {
        if let Some(g) = &mut p.borrow_mut().grad {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}
