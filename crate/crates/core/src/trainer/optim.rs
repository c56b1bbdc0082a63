use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// `theta += lr * g`.
    Plain,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for the adaptive optimiser; empty for plain ascent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub steps: u64,
    pub first: Option<ModelParams>,
    pub second: Option<ModelParams>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self { steps: 0, first: None, second: None }
    }
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new()
    }
}

/// Scales `grad` in place so its global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grad.sq_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        grad.scale(max_norm / norm);
    }
    norm
}

/// One ascent step with a learning rate per parameter group
/// (prior, generator, returns).
pub fn ascend(params: &mut ModelParams, grad: &ModelParams, lrs: [f64; 3], cfg: &OptimizerConfig, state: &mut OptimizerState) {
    state.steps += 1;
    match cfg {
        OptimizerConfig::Plain => {
            for ((p, g), lr) in params.groups_mut().into_iter().zip(grad.groups()).zip(lrs) {
                p.axpy(lr, g);
            }
        }
        OptimizerConfig::Adam { beta1, beta2, eps } => {
            let m = state.first.get_or_insert_with(|| grad.zeros_like());
            let v = state.second.get_or_insert_with(|| grad.zeros_like());
            let t = state.steps as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let groups = params.groups_mut().into_iter().zip(grad.groups()).zip(m.groups_mut()).zip(v.groups_mut());
            for ((((p, g), m), v), lr) in groups.zip(lrs) {
                for (((pe, ge), me), ve) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let pd = pe.tensor.data_mut();
                    let md = me.tensor.data_mut();
                    let vd = ve.tensor.data_mut();
                    for (i, &gi) in ge.tensor.data().iter().enumerate() {
                        md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                        vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                        pd[i] += lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
