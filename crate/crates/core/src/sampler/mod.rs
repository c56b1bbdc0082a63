//! Unadjusted Langevin sampling over `z0`, persistent chains for training,
//! and a closed-form Gaussian oracle for the linear test configuration.

mod chains;
mod oracle;

pub use chains::ChainStore;
pub use oracle::{
    fixture_instances, gaussian_oracle_solve, log_marginal, plan_oracle, FixtureInstance, GaussianOracle,
    LinearGaussianSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncodedTrajectory, LatentPlanModel, ScoreTerms};
use crate::numerics::{gaussian_sample, RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinConfig {
    pub step_size: f64,
    pub num_steps: usize,
    /// Weight on the return likelihood when sampling plans.
    #[serde(default = "one")]
    pub guidance_weight: f64,
    /// 1 for Langevin dynamics, 0 for plain gradient ascent in tests.
    #[serde(default = "one")]
    pub noise_scale: f64,
    /// Plan sampling divides the step by `max(w, 1)`, keeping `s * w` (and so
    /// the stiffness of the weighted return term) fixed as `w` grows.
    #[serde(default = "yes")]
    pub scale_step_with_guidance: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl LangevinConfig {
    pub fn new(step_size: f64, num_steps: usize) -> Self {
        Self { step_size, num_steps, guidance_weight: 1.0, noise_scale: 1.0, scale_step_with_guidance: true }
    }

    /// Two warm-started steps per iteration.
    pub fn persistent_training() -> Self {
        Self::new(0.3, 2)
    }

    pub fn fresh_training() -> Self {
        Self::new(0.3, 15)
    }

    pub fn inference() -> Self {
        Self::new(0.3, 64)
    }

    pub fn with_guidance(mut self, w: f64) -> Self {
        self.guidance_weight = w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(format!("step size must be > 0, got {}", self.step_size)));
        }
        if self.num_steps == 0 {
            return Err(Error::config("Langevin needs at least one step"));
        }
        if !(self.guidance_weight >= 0.0 && self.guidance_weight.is_finite()) {
            return Err(Error::config(format!("guidance weight must be >= 0, got {}", self.guidance_weight)));
        }
        if self.noise_scale != 0.0 && self.noise_scale != 1.0 {
            return Err(Error::config("noise_scale must be 0 or 1"));
        }
        Ok(())
    }
}

/// `z + s * score + noise * sqrt(2 s) * eps`.
pub fn langevin_step(z: &Tensor, score: &Tensor, cfg: &LangevinConfig, rng: &mut RngStream) -> Result<Tensor> {
    if z.shape() != score.shape() {
        return Err(Error::shape(format!("state {:?} vs score {:?}", z.shape(), score.shape())));
    }
    let s = cfg.step_size;
    let amp = cfg.noise_scale * (2.0 * s).sqrt();
    let mut out = z.clone();
    for (o, g) in out.data_mut().iter_mut().zip(score.data()) {
        *o += s * g;
        if amp != 0.0 {
            *o += amp * rng.standard_normal();
        }
    }
    Ok(out)
}

/// Runs `cfg.num_steps` Langevin steps from `init` with an arbitrary score.
pub fn run_chain<F>(init: &Tensor, cfg: &LangevinConfig, rng: &mut RngStream, mut score: F) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    cfg.validate()?;
    let mut z = init.clone();
    for _ in 0..cfg.num_steps {
        let g = score(&z)?;
        z = langevin_step(&z, &g, cfg, rng)?;
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("Langevin chain".into()));
    }
    Ok(z)
}

/// Draws from `p(z0 | tau, y)` starting at `init`.
pub fn sample_posterior(
    model: &LatentPlanModel,
    traj: &EncodedTrajectory,
    y: f64,
    cfg: &LangevinConfig,
    init: &Tensor,
    rng: &mut RngStream,
) -> Result<Tensor> {
    run_chain(init, cfg, rng, |z| model.posterior_score(z, traj, y, ScoreTerms::ALL))
}

/// Draws a plan for target return `y` from a fresh standard-normal start,
/// with the return likelihood weighted by `cfg.guidance_weight`.
pub fn sample_plan(model: &LatentPlanModel, y: f64, cfg: &LangevinConfig, rng: &mut RngStream) -> Result<Tensor> {
    cfg.validate()?;
    let init = gaussian_sample(&[model.latent_dim()], rng)?;
    let mut run = cfg.clone();
    if cfg.scale_step_with_guidance {
        run.step_size /= cfg.guidance_weight.max(1.0);
    }
    run_chain(&init, &run, rng, |z| model.plan_score(z, y, cfg.guidance_weight))
}

/// Sample mean and covariance (row-major, `1/n` normalisation).
pub fn sample_moments(samples: &[Tensor]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let d = samples.first().map_or(0, Tensor::len);
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.data()) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for s in samples {
        let x = s.data();
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

/// `||a - b||_F / ||b||_F`.
pub fn relative_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Per-coordinate stationary variance of ULA on `N(0, var)`.
pub fn ula_stationary_variance(var: f64, step: f64) -> f64 {
    var / (1.0 - step / (2.0 * var))
}
