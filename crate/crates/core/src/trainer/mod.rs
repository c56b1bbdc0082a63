//! Approximate maximum-likelihood learning: posterior sampling per batch
//! example, then ascent on the three parameter groups.

pub(crate) mod checkpoint;
mod identity;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use identity::{marginal_gradient, posterior_gradient_estimate, relative_error};
pub use optim::{ascend, clip_global_norm, OptimizerConfig, OptimizerState};

pub(crate) use checkpoint::atomic_write;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncodedTrajectory, ExampleGradients, LatentPlanModel};
use crate::numerics::{gaussian_sample, purpose, RngStream, Tensor};
use crate::sampler::{sample_posterior, ChainStore, LangevinConfig};

/// One training pair with the return already normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub traj: EncodedTrajectory,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_prior: f64,
    pub lr_generator: f64,
    pub lr_returns: f64,
    pub sampler: LangevinConfig,
    /// Warm-start each example's chain from its previous state.
    pub persistent_chains: bool,
    pub seed: u64,
    /// Checkpoint cadence in iterations; 0 writes only the final one.
    pub checkpoint_every: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub clip_norm: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 16,
            lr_prior: 1e-3,
            lr_generator: 1e-3,
            lr_returns: 1e-3,
            sampler: LangevinConfig::persistent_training(),
            persistent_chains: true,
            seed: 0,
            checkpoint_every: 1000,
            optimizer: OptimizerConfig::default(),
            clip_norm: Some(10.0),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        for (name, lr) in [("lr_prior", self.lr_prior), ("lr_generator", self.lr_generator), ("lr_returns", self.lr_returns)]
        {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be a finite non-negative number")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("clip_norm must be positive"));
            }
        }
        self.sampler.validate()
    }

    fn learning_rates(&self) -> [f64; 3] {
        [self.lr_prior, self.lr_generator, self.lr_returns]
    }
}

/// Mutable training state that survives checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed iterations.
    pub iteration: u64,
    pub optimizer: OptimizerState,
    pub chains: ChainStore,
}

impl TrainState {
    pub fn new(num_examples: usize, latent_dim: usize, seed: u64) -> Self {
        Self { iteration: 0, optimizer: OptimizerState::new(), chains: ChainStore::new(num_examples, latent_dim, seed) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub iteration: u64,
    /// Mean negative log-likelihood per action.
    pub action_nll: f64,
    /// Mean negative log-likelihood per return.
    pub return_nll: f64,
    pub grad_norm_prior: f64,
    pub grad_norm_generator: f64,
    pub grad_norm_returns: f64,
    pub wall_clock_secs: f64,
}

/// Example indices for `iteration`: epochs are shuffled independently and
/// cut into consecutive batches, the last one possibly short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, iteration: u64) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size) as u64;
    let epoch = iteration / per_epoch;
    let j = (iteration % per_epoch) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::derive(seed, purpose::SHUFFLE, &[epoch]).shuffle(&mut order);
    order[j * batch_size..((j + 1) * batch_size).min(n)].to_vec()
}

fn example_step(
    model: &LatentPlanModel,
    ex: &TrainingExample,
    sampler: &LangevinConfig,
    init: &Tensor,
    mut rng: RngStream,
) -> Result<(Tensor, ExampleGradients)> {
    let z0 = sample_posterior(model, &ex.traj, ex.y, sampler, init, &mut rng)?;
    let grads = model.example_gradients(&z0, &ex.traj, ex.y)?;
    Ok((z0, grads))
}

/// Samples posteriors for `batch`, averages the example gradients and
/// updates the parameters. The chain store advances even at zero learning
/// rate.
pub fn train_step(
    model: &mut LatentPlanModel,
    data: &[TrainingExample],
    batch: &[usize],
    cfg: &TrainerConfig,
    state: &mut TrainState,
) -> Result<TrainingRecord> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let start = Instant::now();
    let it = state.iteration;
    let mut inits = Vec::with_capacity(batch.len());
    for &i in batch {
        if i >= data.len() {
            return Err(Error::IndexOutOfRange { index: i, len: data.len() });
        }
        inits.push(if cfg.persistent_chains {
            state.chains.get_init(i)?
        } else {
            let mut r = RngStream::derive(cfg.seed, purpose::CHAIN_INIT, &[it, i as u64]);
            gaussian_sample(&[model.latent_dim()], &mut r)?
        });
    }
    let snapshot: &LatentPlanModel = model;
    let results: Vec<Result<(Tensor, ExampleGradients)>> = batch
        .par_iter()
        .zip(&inits)
        .map(|(&i, init)| {
            let rng = RngStream::derive(cfg.seed, purpose::POSTERIOR, &[it, i as u64]);
            example_step(snapshot, &data[i], &cfg.sampler, init, rng)
        })
        .collect();

    let n = batch.len() as f64;
    let mut total = snapshot.params.zeros_like();
    let mut steps = 0usize;
    let (mut traj_ll, mut ret_ll) = (0.0, 0.0);
    let mut finals = Vec::with_capacity(batch.len());
    for (&i, r) in batch.iter().zip(results) {
        let (z0, g) = r.map_err(|e| Error::NonFinite(format!("iteration {it}, example {i}: {e}")))?;
        if !g.params.is_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {it}, example {i}")));
        }
        total.axpy(1.0, &g.params);
        traj_ll += g.traj_loglik;
        ret_ll += g.return_loglik;
        steps += data[i].traj.len();
        finals.push((i, z0));
    }
    total.scale(1.0 / n);
    let norms = total.groups().map(|g| g.sq_norm().sqrt());
    if let Some(c) = cfg.clip_norm {
        clip_global_norm(&mut total, c);
    }
    optim::ascend(&mut model.params, &total, cfg.learning_rates(), &cfg.optimizer, &mut state.optimizer);
    if !model.params.is_finite() {
        return Err(Error::NonFinite(format!("parameters after iteration {it}")));
    }
    if cfg.persistent_chains {
        for (i, z0) in &finals {
            state.chains.update(*i, z0)?;
        }
    }
    state.iteration += 1;
    Ok(TrainingRecord {
        iteration: state.iteration,
        action_nll: -traj_ll / steps as f64,
        return_nll: -ret_ll / n,
        grad_norm_prior: norms[0],
        grad_norm_generator: norms[1],
        grad_norm_returns: norms[2],
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs iterations `state.iteration + 1 ..= cfg.iterations`. `checkpoint` is
/// called at the configured cadence and once at the end.
pub fn fit<F>(
    model: &mut LatentPlanModel,
    data: &[TrainingExample],
    cfg: &TrainerConfig,
    state: &mut TrainState,
    mut checkpoint: F,
) -> Result<Vec<TrainingRecord>>
where
    F: FnMut(&LatentPlanModel, &TrainState) -> Result<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("dataset is empty"));
    }
    if state.chains.len() != data.len() {
        return Err(Error::validation(format!(
            "chain store has {} entries for {} examples",
            state.chains.len(),
            data.len()
        )));
    }
    let mut records = Vec::new();
    let mut elapsed = 0.0;
    while state.iteration < cfg.iterations {
        let batch = batch_indices(data.len(), cfg.batch_size, cfg.seed, state.iteration);
        let mut rec = train_step(model, data, &batch, cfg, state)?;
        elapsed += rec.wall_clock_secs;
        rec.wall_clock_secs = elapsed;
        records.push(rec);
        if cfg.checkpoint_every > 0 && state.iteration.is_multiple_of(cfg.checkpoint_every) && state.iteration < cfg.iterations {
            checkpoint(model, state)?;
        }
    }
    checkpoint(model, state)?;
    Ok(records)
}

/// Writes records as CSV with a header row.
pub fn write_training_log(path: &Path, records: &[TrainingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::validation(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    atomic_write(path, &bytes)
}

#[cfg(test)]
mod tests;
