//! Planning as inference at test time, the evaluation harness and a
//! return-conditioned behaviour-cloning baseline.

mod baseline;

pub use baseline::{baseline_config, train_baseline, BaselinePolicy};

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::model::{ActionValue, Actions, ContextWindow, LatentPlanModel, NormalizationStats, Trajectory};
use crate::numerics::{purpose, RngStream, Tensor};
use crate::sampler::{sample_plan, LangevinConfig};
use crate::trainer::checkpoint::atomic_write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub trajectory: Trajectory,
    pub achieved_return: f64,
    pub target_return: f64,
    /// Plan the episode was conditioned on (`y` itself for the baseline).
    pub z0: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// Value hash of a latent, used to assert that a plan is never modified.
pub fn latent_hash(z: &Tensor) -> u64 {
    let mut h = DefaultHasher::new();
    z.shape().hash(&mut h);
    for v in z.data() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Runs one episode with a fixed conditioning vector. Only the last
/// `model.context()` steps are kept for the policy.
fn rollout_fixed(
    env: &mut dyn Environment,
    model: &LatentPlanModel,
    z: &Tensor,
    stats: &NormalizationStats,
    deterministic: bool,
    env_rng: &mut RngStream,
    action_rng: &mut RngStream,
) -> Result<(Trajectory, Vec<f64>)> {
    let k = model.context();
    let mut buffer: VecDeque<(Vec<f64>, Option<ActionValue>)> = VecDeque::with_capacity(k + 1);
    let mut state = env.reset(env_rng);
    let mut prev = None;
    let (mut states, mut actions, mut log_probs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..env.horizon() {
        buffer.push_back((state.clone(), prev.take()));
        if buffer.len() > k {
            buffer.pop_front();
        }
        let window = ContextWindow {
            states: buffer.iter().map(|(s, _)| s.clone()).collect(),
            prev_actions: buffer.iter().map(|(_, a)| a.clone()).collect(),
        };
        let dist = model.action_distribution(&window, z, Some(stats))?;
        let action = if deterministic { dist.mode() } else { dist.sample(action_rng) };
        log_probs.push(dist.log_prob(&action)?);
        states.push(state);
        actions.push(action.clone());
        let step = env.step(&action, env_rng)?;
        if step.done {
            break;
        }
        state = step.state;
        prev = Some(action);
    }
    let actions = match actions.first() {
        Some(ActionValue::Discrete(_)) => Actions::Discrete(
            actions.into_iter().map(|a| if let ActionValue::Discrete(i) = a { i } else { unreachable!() }).collect(),
        ),
        _ => Actions::Continuous(
            actions.into_iter().map(|a| if let ActionValue::Continuous(v) = a { v } else { unreachable!() }).collect(),
        ),
    };
    Ok((Trajectory { states, actions }, log_probs))
}

/// Random streams for one evaluation episode. Starts and environment noise
/// depend only on the episode index, so every arm sees the same starts.
#[derive(Clone, Debug)]
pub struct EpisodeStreams {
    pub env: RngStream,
    pub plan: RngStream,
    pub action: RngStream,
}

impl EpisodeStreams {
    pub fn new(seed: u64, episode: u64) -> Self {
        Self {
            env: RngStream::derive(seed, purpose::ENV, &[episode]),
            plan: RngStream::derive(seed, purpose::PLAN, &[episode]),
            action: RngStream::derive(seed, purpose::ROLLOUT, &[episode]),
        }
    }
}

/// Infers a plan for `y_target` (raw return scale), then acts with it fixed.
pub fn plan_and_rollout(
    env: &mut dyn Environment,
    model: &LatentPlanModel,
    stats: &NormalizationStats,
    y_target: f64,
    sampler: &LangevinConfig,
    streams: &mut EpisodeStreams,
    deterministic: bool,
) -> Result<RolloutResult> {
    if !y_target.is_finite() {
        return Err(Error::Domain("target return must be finite".into()));
    }
    let z0 = sample_plan(model, stats.normalize_return(y_target), sampler, &mut streams.plan)?;
    let z = model.prior_transform(&z0)?;
    let before = latent_hash(&z);
    let (trajectory, log_probs) =
        rollout_fixed(env, model, &z, stats, deterministic, &mut streams.env, &mut streams.action)?;
    if latent_hash(&z) != before {
        return Err(Error::validation("plan changed during the episode"));
    }
    Ok(RolloutResult {
        trajectory,
        achieved_return: env.episode_return(),
        target_return: y_target,
        z0: z0.data().to_vec(),
        log_probs,
    })
}

/// Baseline episode conditioned on the normalised target return.
pub fn rollout_baseline(
    env: &mut dyn Environment,
    policy: &BaselinePolicy,
    stats: &NormalizationStats,
    y_target: f64,
    streams: &mut EpisodeStreams,
    deterministic: bool,
) -> Result<RolloutResult> {
    if !y_target.is_finite() {
        return Err(Error::Domain("target return must be finite".into()));
    }
    let z = policy.conditioning(stats.normalize_return(y_target));
    let (trajectory, log_probs) =
        rollout_fixed(env, &policy.model, &z, stats, deterministic, &mut streams.env, &mut streams.action)?;
    Ok(RolloutResult {
        trajectory,
        achieved_return: env.episode_return(),
        target_return: y_target,
        z0: z.data().to_vec(),
        log_probs,
    })
}

/// Which policy an evaluation runs.
#[derive(Clone, Copy, Debug)]
pub enum Agent<'a> {
    Lpt { model: &'a LatentPlanModel, sampler: &'a LangevinConfig },
    Baseline(&'a BaselinePolicy),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub agent: String,
    /// Guidance weight (`None` for the baseline).
    pub w: Option<f64>,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    /// Share of episodes whose return reached the target.
    pub success_rate: f64,
    pub mean_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub agent: String,
    pub w: Option<f64>,
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env_id: String,
    pub seed: u64,
    pub y_target: f64,
    pub summaries: Vec<EvalSummary>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn summary(&self, agent: &str, w: Option<f64>) -> Option<&EvalSummary> {
        self.summaries.iter().find(|s| s.agent == agent && s.w == w)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn write_episodes_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.episodes {
            w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        atomic_write(path, &bytes)
    }

    /// Appends another report's rows (same env, seed and target).
    pub fn merge(&mut self, other: EvalReport) -> Result<()> {
        if other.env_id != self.env_id || other.seed != self.seed || other.y_target != self.y_target {
            return Err(Error::validation("reports differ in env, seed or target"));
        }
        self.summaries.extend(other.summaries);
        self.episodes.extend(other.episodes);
        Ok(())
    }
}

/// Settings shared by every arm of an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    /// Raw-scale target return.
    pub y_target: f64,
    pub deterministic: bool,
}

/// Runs `cfg.episodes` independent episodes per guidance weight (a single
/// set for the baseline) with a fresh plan per episode.
pub fn evaluate<F>(make_env: F, agent: Agent<'_>, stats: &NormalizationStats, cfg: &EvalConfig, w_list: &[f64]) -> Result<EvalReport>
where
    F: Fn() -> Box<dyn Environment + Send> + Sync,
{
    if cfg.episodes == 0 {
        return Err(Error::config("episodes must be at least 1"));
    }
    let env_id = make_env().id().to_string();
    let arms: Vec<(String, Option<f64>)> = match agent {
        Agent::Lpt { .. } => {
            if w_list.is_empty() {
                return Err(Error::config("need at least one guidance weight"));
            }
            w_list.iter().map(|&w| ("lpt".to_string(), Some(w))).collect()
        }
        Agent::Baseline(_) => vec![("baseline".to_string(), None)],
    };
    let mut report = EvalReport { env_id, seed: cfg.seed, y_target: cfg.y_target, summaries: Vec::new(), episodes: Vec::new() };
    for (name, w) in arms {
        let results: Vec<Result<RolloutResult>> = (0..cfg.episodes)
            .into_par_iter()
            .map(|e| {
                let mut env = make_env();
                let mut streams = EpisodeStreams::new(cfg.seed, e as u64);
                match agent {
                    Agent::Lpt { model, sampler } => {
                        let s = sampler.clone().with_guidance(w.expect("lpt arms carry a weight"));
                        plan_and_rollout(env.as_mut(), model, stats, cfg.y_target, &s, &mut streams, cfg.deterministic)
                    }
                    Agent::Baseline(p) => rollout_baseline(env.as_mut(), p, stats, cfg.y_target, &mut streams, cfg.deterministic),
                }
            })
            .collect();
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let returns: Vec<f64> = results.iter().map(|r| r.achieved_return).collect();
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        report.summaries.push(EvalSummary {
            agent: name.clone(),
            w,
            episodes: results.len(),
            mean_return: mean,
            std_return: std,
            success_rate: returns.iter().filter(|&&r| r >= cfg.y_target).count() as f64 / n,
            mean_length: results.iter().map(|r| r.trajectory.len()).sum::<usize>() as f64 / n,
        });
        report.episodes.extend(results.iter().enumerate().map(|(e, r)| EpisodeRecord {
            agent: name.clone(),
            w,
            episode: e,
            ret: r.achieved_return,
            length: r.trajectory.len(),
        }));
    }
    Ok(report)
}
