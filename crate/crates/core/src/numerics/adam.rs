use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter Adam moments plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, config: AdamConfig) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update. Gradients are validated before any
/// parameter is touched, so a rejected step leaves `params` and `state`
/// unchanged.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(shape_err!("adam: parameter {i} shape {:?} vs grad {:?}", p.shape(), g.shape()));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    if !(lr > 0.0) {
        return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
    }

    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let step = lr / bc1;
    let bc2_sqrt = bc2.sqrt();

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gf = gi.as_f64();
            let mf = beta1 * mi.as_f64() + (1.0 - beta1) * gf;
            let vf = beta2 * vi.as_f64() + (1.0 - beta2) * gf * gf;
            *mi = T::of(mf);
            *vi = T::of(vf);
            let denom = vf.sqrt() / bc2_sqrt + eps;
            *pi = T::of(pi.as_f64() - step * mf / denom);
        }
    }
    Ok(())
}
