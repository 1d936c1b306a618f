use vti_tensor::{ParamStore, Real};

use crate::error::{contract, CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Moments<T> {
    pub fn zeros(params: &ParamStore<T>) -> Self {
        Self {
            m: params.zero_grads(),
            v: params.zero_grads(),
        }
    }
}

/// Bias-corrected Adam update at step `t` (1-based). Checks every gradient
/// before touching any parameter.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Vec<T>],
    moments: &mut Moments<T>,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(contract("adam_step: step count starts at 1"));
    }
    if grads.len() != params.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(contract(
            "adam_step: gradient and moment buffers do not match the parameters",
        ));
    }
    for id in params.ids() {
        let g = &grads[id.index()];
        if g.len() != params.get(id).len() {
            return Err(contract(format!(
                "adam_step: gradient length mismatch for {}",
                params.name(id)
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFiniteGradient(params.name(id).to_string()));
        }
    }
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::of(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps) = (T::of(cfg.learning_rate), T::of(cfg.eps));
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let (m, v) = (&mut moments.m[i], &mut moments.v[i]);
        for (((p, &g), m), v) in params.get_mut(id).data_mut().iter_mut().zip(&grads[i]).zip(m).zip(v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| {
            let x = g.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::of(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
