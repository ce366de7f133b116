//! Bias-corrected Adam over the structured parameter set.
//!
//! Per-subnet field order (shared with the flat views in
//! [`crate::rollout`]): `bn_in.gamma, bn_in.beta, fc1.w, fc1.b,
//! bn1.gamma, bn1.beta, fc2.w, fc2.b, bn2.gamma, bn2.beta, out.w, out.b`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::rollout::{Grads, SolverParams};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment accumulators (gradient-shaped) and step counter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Grads,
    pub v: Grads,
    pub step: u64,
}

impl AdamState {
    /// Placeholder used while constructing `SolverParams`; replaced by
    /// [`AdamState::zeros_like`] before any update.
    pub(crate) fn empty() -> Self {
        AdamState {
            m: Grads {
                u0: 0.0,
                grad_u0: ndarray::Array1::zeros(0),
                subnets: Vec::new(),
            },
            v: Grads {
                u0: 0.0,
                grad_u0: ndarray::Array1::zeros(0),
                subnets: Vec::new(),
            },
            step: 0,
        }
    }

    pub fn zeros_like(params: &SolverParams) -> Self {
        AdamState {
            m: Grads::zeros_like(params),
            v: Grads::zeros_like(params),
            step: 0,
        }
    }
}

struct Correction {
    lr: f64,
    inv_bias1: f64,
    inv_bias2: f64,
}

fn update_scalar(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, k: &Correction) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let m_hat = *m * k.inv_bias1;
    let v_hat = *v * k.inv_bias2;
    *p -= k.lr * m_hat / (v_hat.sqrt() + EPSILON);
}

fn update_slice(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], k: &Correction) {
    debug_assert_eq!(p.len(), g.len());
    for i in 0..p.len() {
        update_scalar(&mut p[i], g[i], &mut m[i], &mut v[i], k);
    }
}

/// One Adam step on every parameter. Fails on non-finite gradients; the
/// step counter is only advanced on success.
pub fn adam_step(params: &mut SolverParams, grads: &Grads, lr: f64) -> Result<()> {
    if !grads.u0.is_finite()
        || grads.grad_u0.iter().any(|v| !v.is_finite())
        || grads.subnets.iter().any(|s| {
            [
                s.bn_in.gamma.iter(),
                s.bn_in.beta.iter(),
                s.bn1.gamma.iter(),
                s.bn1.beta.iter(),
                s.bn2.gamma.iter(),
                s.bn2.beta.iter(),
            ]
            .into_iter()
            .flatten()
            .any(|v| !v.is_finite())
                || s.fc1.w.iter().any(|v| !v.is_finite())
                || s.fc1.b.iter().any(|v| !v.is_finite())
                || s.fc2.w.iter().any(|v| !v.is_finite())
                || s.fc2.b.iter().any(|v| !v.is_finite())
                || s.out.w.iter().any(|v| !v.is_finite())
                || s.out.b.iter().any(|v| !v.is_finite())
        })
    {
        return Err(SolverError::InvalidArgument(
            "non-finite gradients passed to adam_step".into(),
        ));
    }

    let SolverParams {
        u0,
        grad_u0,
        subnets,
        adam,
        ..
    } = params;
    adam.step += 1;
    let t = adam.step as i32;
    let k = Correction {
        lr,
        inv_bias1: 1.0 / (1.0 - BETA1.powi(t)),
        inv_bias2: 1.0 / (1.0 - BETA2.powi(t)),
    };

    update_scalar(u0, grads.u0, &mut adam.m.u0, &mut adam.v.u0, &k);
    update_slice(
        grad_u0.as_slice_mut().unwrap(),
        grads.grad_u0.as_slice().unwrap(),
        adam.m.grad_u0.as_slice_mut().unwrap(),
        adam.v.grad_u0.as_slice_mut().unwrap(),
        &k,
    );

    for (((sp, sg), sm), sv) in subnets
        .iter_mut()
        .zip(grads.subnets.iter())
        .zip(adam.m.subnets.iter_mut())
        .zip(adam.v.subnets.iter_mut())
    {
        update_slice(
            sp.bn_in.gamma.as_slice_mut().unwrap(),
            sg.bn_in.gamma.as_slice().unwrap(),
            sm.bn_in.gamma.as_slice_mut().unwrap(),
            sv.bn_in.gamma.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.bn_in.beta.as_slice_mut().unwrap(),
            sg.bn_in.beta.as_slice().unwrap(),
            sm.bn_in.beta.as_slice_mut().unwrap(),
            sv.bn_in.beta.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.fc1.w.as_slice_mut().unwrap(),
            sg.fc1.w.as_slice().unwrap(),
            sm.fc1.w.as_slice_mut().unwrap(),
            sv.fc1.w.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.fc1.b.as_slice_mut().unwrap(),
            sg.fc1.b.as_slice().unwrap(),
            sm.fc1.b.as_slice_mut().unwrap(),
            sv.fc1.b.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.bn1.gamma.as_slice_mut().unwrap(),
            sg.bn1.gamma.as_slice().unwrap(),
            sm.bn1.gamma.as_slice_mut().unwrap(),
            sv.bn1.gamma.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.bn1.beta.as_slice_mut().unwrap(),
            sg.bn1.beta.as_slice().unwrap(),
            sm.bn1.beta.as_slice_mut().unwrap(),
            sv.bn1.beta.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.fc2.w.as_slice_mut().unwrap(),
            sg.fc2.w.as_slice().unwrap(),
            sm.fc2.w.as_slice_mut().unwrap(),
            sv.fc2.w.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.fc2.b.as_slice_mut().unwrap(),
            sg.fc2.b.as_slice().unwrap(),
            sm.fc2.b.as_slice_mut().unwrap(),
            sv.fc2.b.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.bn2.gamma.as_slice_mut().unwrap(),
            sg.bn2.gamma.as_slice().unwrap(),
            sm.bn2.gamma.as_slice_mut().unwrap(),
            sv.bn2.gamma.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.bn2.beta.as_slice_mut().unwrap(),
            sg.bn2.beta.as_slice().unwrap(),
            sm.bn2.beta.as_slice_mut().unwrap(),
            sv.bn2.beta.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.out.w.as_slice_mut().unwrap(),
            sg.out.w.as_slice().unwrap(),
            sm.out.w.as_slice_mut().unwrap(),
            sv.out.w.as_slice_mut().unwrap(),
            &k,
        );
        update_slice(
            sp.out.b.as_slice_mut().unwrap(),
            sg.out.b.as_slice().unwrap(),
            sm.out.b.as_slice_mut().unwrap(),
            sv.out.b.as_slice_mut().unwrap(),
            &k,
        );
    }
    Ok(())
}
