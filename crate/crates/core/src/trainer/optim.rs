use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

fn check_lens(params: usize, grads: usize, state: &[usize]) -> Result<()> {
    ensure!(
        grads == params && state.iter().all(|&s| s == params),
        Shape,
        "optimizer buffers disagree: {params} parameters, {grads} gradients, state {state:?}"
    );
    Ok(())
}

/// `v ← μ·v + g`, `p ← p − lr·v`. With `momentum = 0` this is plain SGD.
pub fn sgd_step(params: &mut [f32], grads: &[f32], velocity: &mut [f32], lr: f64, momentum: f64) -> Result<()> {
    check_lens(params.len(), grads.len(), &[velocity.len()])?;
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let nv = momentum * *v as f64 + g as f64;
        *v = nv as f32;
        *p = (*p as f64 - lr * nv) as f32;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update; `t` is the 1-based step count.
pub fn adam_step(
    params: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f64,
    hp: AdamParams,
) -> Result<()> {
    check_lens(params.len(), grads.len(), &[m.len(), v.len()])?;
    ensure!(t >= 1, InvalidArgument, "Adam step count starts at 1");
    let c1 = 1.0 - hp.beta1.powf(t as f64);
    let c2 = 1.0 - hp.beta2.powf(t as f64);
    for i in 0..params.len() {
        let g = grads[i] as f64;
        let mi = hp.beta1 * m[i] as f64 + (1.0 - hp.beta1) * g;
        let vi = hp.beta2 * v[i] as f64 + (1.0 - hp.beta2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let update = lr * (mi / c1) / ((vi / c2).sqrt() + hp.eps);
        params[i] = (params[i] as f64 - update) as f32;
    }
    Ok(())
}

/// Per-tensor optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState {
    Sgd { velocity: Vec<Vec<f32>> },
    Adam { step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>> },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd { velocity: zeros() },
            OptimizerKind::Adam => OptimizerState::Adam {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerState::Sgd { .. } => OptimizerKind::Sgd,
            OptimizerState::Adam { .. } => OptimizerKind::Adam,
        }
    }

    /// Applies one update to every tensor.
    pub fn step(
        &mut self,
        params: &mut [Vec<f32>],
        grads: &[Vec<f32>],
        lr: f64,
        momentum: f64,
        adam: AdamParams,
    ) -> Result<()> {
        ensure!(
            params.len() == grads.len(),
            Shape,
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        );
        match self {
            OptimizerState::Sgd { velocity } => {
                ensure!(velocity.len() == params.len(), Shape, "optimizer state has wrong tensor count");
                for ((p, g), vel) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
                    sgd_step(p, g, vel, lr, momentum)?;
                }
            }
            OptimizerState::Adam { step, m, v } => {
                ensure!(
                    m.len() == params.len() && v.len() == params.len(),
                    Shape,
                    "optimizer state has wrong tensor count"
                );
                *step += 1;
                for i in 0..params.len() {
                    adam_step(&mut params[i], &grads[i], &mut m[i], &mut v[i], *step, lr, adam)?;
                }
            }
        }
        Ok(())
    }
}
