use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GeneratorConfig, LatentPlanModel, ModelConfig, PriorConfig, ReturnConfig};
use crate::numerics::{purpose, RngStream, Tensor};
use crate::trainer::{batch_indices, clip_global_norm, ascend, OptimizerState, TrainerConfig, TrainingExample, TrainingRecord};

/// Generator of the same shape as the plan model's, conditioned on the
/// normalised return through a one-dimensional "plan" `[y]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselinePolicy {
    pub model: LatentPlanModel,
}

/// Baseline architecture matching `lpt` in width, depth and context.
pub fn baseline_config(lpt: &ModelConfig) -> ModelConfig {
    let generator = match &lpt.generator {
        GeneratorConfig::Transformer { hidden, layers, heads, context, .. } => GeneratorConfig::Transformer {
            hidden: *hidden,
            layers: *layers,
            heads: *heads,
            context: *context,
            z_tokens: 1,
        },
        GeneratorConfig::Linear => GeneratorConfig::Linear,
    };
    ModelConfig {
        latent_dim: 1,
        prior: PriorConfig::Identity,
        generator,
        returns: ReturnConfig::Linear,
        ..lpt.clone()
    }
}

impl BaselinePolicy {
    pub fn new(lpt: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = RngStream::derive(seed, purpose::INIT, &[]);
        Ok(Self { model: LatentPlanModel::new(baseline_config(lpt), &mut rng)? })
    }

    pub fn conditioning(&self, y_norm: f64) -> Tensor {
        Tensor::filled(&[1], y_norm)
    }
}

/// Action maximum likelihood with the same batch schedule, optimiser and
/// iteration budget as the plan model's trainer. Only the generator learns.
pub fn train_baseline(
    lpt: &ModelConfig,
    data: &[TrainingExample],
    cfg: &TrainerConfig,
) -> Result<(BaselinePolicy, Vec<TrainingRecord>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("dataset is empty"));
    }
    let mut policy = BaselinePolicy::new(lpt, cfg.seed)?;
    let mut opt = OptimizerState::new();
    let mut records = Vec::with_capacity(cfg.iterations as usize);
    let mut elapsed = 0.0;
    for it in 0..cfg.iterations {
        let start = Instant::now();
        let batch = batch_indices(data.len(), cfg.batch_size, cfg.seed, it);
        let model = &policy.model;
        let grads: Vec<_> = batch
            .par_iter()
            .map(|&i| model.example_gradients(&policy.conditioning(data[i].y), &data[i].traj, data[i].y))
            .collect();
        let mut total = model.params.zeros_like();
        let (mut ll, mut steps) = (0.0, 0usize);
        for (&i, g) in batch.iter().zip(grads) {
            let g = g?;
            total.generator.axpy(1.0, &g.params.generator);
            ll += g.traj_loglik;
            steps += data[i].traj.len();
        }
        total.scale(1.0 / batch.len() as f64);
        let norm = total.generator.sq_norm().sqrt();
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut total, c);
        }
        ascend(&mut policy.model.params, &total, [0.0, cfg.lr_generator, 0.0], &cfg.optimizer, &mut opt);
        if !policy.model.params.is_finite() {
            return Err(Error::NonFinite(format!("baseline parameters after iteration {}", it + 1)));
        }
        elapsed += start.elapsed().as_secs_f64();
        records.push(TrainingRecord {
            iteration: it + 1,
            action_nll: -ll / steps as f64,
            return_nll: 0.0,
            grad_norm_prior: 0.0,
            grad_norm_generator: norm,
            grad_norm_returns: 0.0,
            wall_clock_secs: elapsed,
        });
    }
    Ok((policy, records))
}
