use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// First/second moment buffers, shape-matched to the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<f32>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (alloc::vec![0.0; p.numel()], alloc::vec![0.0; p.numel()]))
            .unzip();
        AdamState {
            config,
            step: 0,
            m,
            v,
        }
    }
}

/// One bias-corrected Adam update over all parameters.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor<f32>>,
    grads: &[Tensor<f32>],
    state: &mut AdamState,
) -> Result<()> {
    let params: Vec<&mut Tensor<f32>> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape {
            op: "adam_step",
            detail: alloc::format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.numel() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: alloc::format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
    for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gv = gv as f64;
            let mj = c.beta1 * m[j] as f64 + (1.0 - c.beta1) * gv;
            let vj = c.beta2 * v[j] as f64 + (1.0 - c.beta2) * gv * gv;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = c.lr * (mj / bc1) / (libm::sqrt(vj / bc2) + c.eps);
            *pv = (*pv as f64 - update) as f32;
        }
    }
    Ok(())
}
