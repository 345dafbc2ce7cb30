use super::ParamSet;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the shared step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: ParamSet,
    second: ParamSet,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Bias-corrected Adam step over every parameter.
pub fn adam_update(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    adam_update_masked(params, grads, state, lr, |_| true)
}

/// Adam step restricted to parameters accepted by `trainable`; the others and
/// their moment estimates are left untouched.
pub fn adam_update_masked(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    lr: f64,
    trainable: impl Fn(&str) -> bool,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.require(name)?;
        if g.dims() != p.dims() {
            return Err(Error::Shape {
                op: "adam_update",
                lhs: p.dims().to_vec(),
                rhs: g.dims().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        if !trainable(name) {
            continue;
        }
        let g = grads.require(name)?;
        if !state.first.contains(name) {
            state.first.insert(name.clone(), super::Tensor::zeros(p.dims()));
            state.second.insert(name.clone(), super::Tensor::zeros(p.dims()));
        }
        let m = state.first.get_mut(name).expect("moment inserted above");
        for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
        }
        let v = state.second.get_mut(name).expect("moment inserted above");
        for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
        }
        let m = state.first.get(name).expect("moment inserted above");
        let v = state.second.get(name).expect("moment inserted above");
        for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Rescales gradients accepted by `include` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(
    grads: &mut ParamSet,
    max_norm: f64,
    include: impl Fn(&str) -> bool,
) -> f64 {
    let norm = grads
        .iter()
        .filter(|(n, _)| include(n))
        .map(|(_, t)| t.sum_squares())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for (name, t) in grads.iter_mut() {
            if include(name) {
                t.scale_assign(c);
            }
        }
    }
    norm
}
