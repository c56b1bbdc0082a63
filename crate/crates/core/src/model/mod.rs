//! The latent plan model: prior transform, trajectory generator and return
//! predictor, plus the log-density scores used for sampling and learning.

mod config;
mod generator;
mod layers;
mod params;
mod prior;
mod returns;
mod trajectory;

pub use config::{ActionSpace, GeneratorConfig, ModelConfig, PriorConfig, ReturnConfig};
pub use generator::attention_windows;
pub use params::{Bound, NamedTensor, ParamSet};
pub use trajectory::{
    ActionValue, Actions, ContextWindow, EncodedTrajectory, NormalizationStats, Targets, Trajectory, STD_FLOOR,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{purpose, Graph, RngStream, Tensor, Var};

/// Parameter groups `alpha`, `beta`, `gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub prior: ParamSet,
    pub generator: ParamSet,
    pub returns: ParamSet,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            prior: self.prior.zeros_like(),
            generator: self.generator.zeros_like(),
            returns: self.returns.zeros_like(),
        }
    }

    pub fn groups(&self) -> [&ParamSet; 3] {
        [&self.prior, &self.generator, &self.returns]
    }

    pub fn groups_mut(&mut self) -> [&mut ParamSet; 3] {
        [&mut self.prior, &mut self.generator, &mut self.returns]
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        self.prior.axpy(alpha, &other.prior);
        self.generator.axpy(alpha, &other.generator);
        self.returns.axpy(alpha, &other.returns);
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.groups_mut() {
            g.scale(alpha);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.groups().iter().map(|g| g.sq_norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.is_finite())
    }

    pub fn num_values(&self) -> usize {
        self.groups().iter().map(|g| g.num_values()).sum()
    }
}

/// Output of the action head for the current step.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    /// Mean of a unit-covariance Gaussian.
    Gaussian { mean: Vec<f64> },
    Categorical { probs: Vec<f64> },
}

impl ActionDistribution {
    /// Most likely action.
    pub fn mode(&self) -> ActionValue {
        match self {
            ActionDistribution::Gaussian { mean } => ActionValue::Continuous(mean.clone()),
            ActionDistribution::Categorical { probs } => {
                let best = probs
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, p)| if *p > probs[best] { i } else { best });
                ActionValue::Discrete(best)
            }
        }
    }

    /// Log-probability (or log-density under unit variance) of `action`.
    pub fn log_prob(&self, action: &ActionValue) -> Result<f64> {
        match (self, action) {
            (ActionDistribution::Categorical { probs }, ActionValue::Discrete(a)) if *a < probs.len() => Ok(probs[*a].ln()),
            (ActionDistribution::Gaussian { mean }, ActionValue::Continuous(x)) if x.len() == mean.len() => Ok(mean
                .iter()
                .zip(x)
                .map(|(m, v)| -0.5 * (v - m).powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln())
                .sum()),
            _ => Err(Error::validation("action does not match the distribution")),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> ActionValue {
        match self {
            ActionDistribution::Gaussian { mean } => {
                ActionValue::Continuous(mean.iter().map(|m| m + rng.standard_normal()).collect())
            }
            ActionDistribution::Categorical { probs } => ActionValue::Discrete(rng.categorical(probs)),
        }
    }
}

/// Which likelihood terms enter the posterior score. The prior term is
/// always present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreTerms {
    pub generator: bool,
    pub returns: bool,
}

impl ScoreTerms {
    pub const ALL: Self = Self { generator: true, returns: true };
    pub const PRIOR_ONLY: Self = Self { generator: false, returns: false };
}

/// Per-example parameter gradients of `log p(tau|z) + log p(y|z)` at a fixed
/// `z0`.
#[derive(Clone, Debug)]
pub struct ExampleGradients {
    pub params: ModelParams,
    pub traj_loglik: f64,
    pub return_loglik: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPlanModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

struct BoundModel<'s> {
    prior: Bound<'s>,
    generator: Bound<'s>,
    returns: Bound<'s>,
}

impl LatentPlanModel {
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, rng);
        Ok(Self { config, params })
    }

    /// Builds a model from existing parameters, checking that their layout
    /// matches the architecture.
    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let reference = init_params(&config, &mut RngStream::new(0, purpose::INIT));
        params.prior.check_layout(&reference.prior, "prior")?;
        params.generator.check_layout(&reference.generator, "generator")?;
        params.returns.check_layout(&reference.returns, "return predictor")?;
        if !params.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { config, params })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn context(&self) -> usize {
        self.config.generator.context()
    }

    fn check_latent(&self, v: &Tensor, what: &str) -> Result<()> {
        if v.len() != self.latent_dim() || v.shape().len() != 1 {
            return Err(Error::shape(format!(
                "{what} has shape {:?}, expected [{}]",
                v.shape(),
                self.latent_dim()
            )));
        }
        Ok(())
    }

    fn bind<'s>(&'s self, g: &mut Graph<'s>, requires_grad: bool) -> BoundModel<'s> {
        BoundModel {
            prior: Bound::new(g, &self.params.prior, requires_grad),
            generator: Bound::new(g, &self.params.generator, requires_grad),
            returns: Bound::new(g, &self.params.returns, requires_grad),
        }
    }

    pub fn prior_transform(&self, z0: &Tensor) -> Result<Tensor> {
        self.check_latent(z0, "z0")?;
        if matches!(self.config.prior, PriorConfig::Identity) {
            return Ok(z0.clone());
        }
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params.prior, false);
        let x = g.constant(z0.clone());
        let z = prior::forward(&mut g, &self.config.prior, &p, x);
        Ok(g.value(z).clone())
    }

    /// Distribution of the next action given the most recent steps; only the
    /// last `K` steps of `window` are used.
    pub fn action_distribution(
        &self,
        window: &ContextWindow,
        z: &Tensor,
        stats: Option<&NormalizationStats>,
    ) -> Result<ActionDistribution> {
        self.check_latent(z, "z")?;
        let mut window = window.clone();
        window.truncate_front(self.context());
        let (states, prev) = trajectory::encode_inputs(&window, &self.config.action_space, stats)?;
        if states.cols() != self.config.state_dim {
            return Err(Error::shape(format!("state dim {} != {}", states.cols(), self.config.state_dim)));
        }
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params.generator, false);
        let zv = g.constant(z.clone());
        let head = generator::forward(&mut g, &self.config.generator, &p, &states, &prev, zv);
        let out = g.value(head);
        let row = &out.data()[(out.rows() - 1) * out.cols()..];
        g.check_finite(head, "action head")?;
        Ok(match self.config.action_space {
            ActionSpace::Continuous { .. } => ActionDistribution::Gaussian { mean: row.to_vec() },
            ActionSpace::Discrete { .. } => {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                ActionDistribution::Categorical { probs: e.into_iter().map(|v| v / s).collect() }
            }
        })
    }

    fn check_traj(&self, traj: &EncodedTrajectory) -> Result<()> {
        if traj.is_empty() {
            return Err(Error::validation("empty trajectory"));
        }
        if traj.states.cols() != self.config.state_dim {
            return Err(Error::shape(format!("state dim {} != {}", traj.states.cols(), self.config.state_dim)));
        }
        if traj.prev_actions.cols() != self.config.action_space.input_width() {
            return Err(Error::shape("previous-action features do not match the action space"));
        }
        match (&traj.targets, &self.config.action_space) {
            (Targets::Discrete(a), ActionSpace::Discrete { n }) if a.len() == traj.len() && a.iter().all(|x| x < n) => {
                Ok(())
            }
            (Targets::Continuous(a), ActionSpace::Continuous { dim }) if a.rows() == traj.len() && a.cols() == *dim => {
                Ok(())
            }
            _ => Err(Error::validation("trajectory actions do not match the action head")),
        }
    }

    /// `log p(tau | z)` summed over steps.
    pub fn traj_loglik(&self, traj: &EncodedTrajectory, z: &Tensor) -> Result<f64> {
        self.check_latent(z, "z")?;
        self.check_traj(traj)?;
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params.generator, false);
        let zv = g.constant(z.clone());
        let ll = generator::log_likelihood(&mut g, &self.config.generator, &p, traj, zv)?;
        Ok(g.scalar(ll))
    }

    /// `r(z)`, the mean of the return predictor.
    pub fn predict_return(&self, z: &Tensor) -> Result<f64> {
        self.check_latent(z, "z")?;
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params.returns, false);
        let zv = g.constant(z.clone());
        let r = returns::predict(&mut g, &self.config.returns, &p, zv);
        Ok(g.scalar(r))
    }

    /// `log N(y; r(z), sigma^2)`.
    pub fn return_loglik(&self, y: f64, z: &Tensor) -> Result<f64> {
        self.check_latent(z, "z")?;
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params.returns, false);
        let zv = g.constant(z.clone());
        let ll = returns::log_likelihood(&mut g, &self.config.returns, &p, zv, y, self.config.return_variance)?;
        Ok(g.scalar(ll))
    }

    fn likelihood_terms(
        &self,
        g: &mut Graph<'_>,
        p: &BoundModel<'_>,
        z0: Var,
        traj: Option<&EncodedTrajectory>,
        y: Option<f64>,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let z = prior::forward(g, &self.config.prior, &p.prior, z0);
        let t = match traj {
            Some(traj) => Some(generator::log_likelihood(g, &self.config.generator, &p.generator, traj, z)?),
            None => None,
        };
        let r = match y {
            Some(y) => Some(returns::log_likelihood(
                g,
                &self.config.returns,
                &p.returns,
                z,
                y,
                self.config.return_variance,
            )?),
            None => None,
        };
        Ok((t, r))
    }

    /// Likelihood part of the log joint, `log p(tau|U(z0)) + log p(y|U(z0))`,
    /// built on a caller-owned graph with parameters copied in as constants.
    /// Either term may be left out.
    pub fn log_likelihood_graph(
        &self,
        g: &mut Graph<'_>,
        z0: Var,
        traj: Option<&EncodedTrajectory>,
        y: Option<f64>,
    ) -> Result<Var> {
        let p = BoundModel {
            prior: Bound::copied(g, &self.params.prior, false),
            generator: Bound::copied(g, &self.params.generator, false),
            returns: Bound::copied(g, &self.params.returns, false),
        };
        match self.likelihood_terms(g, &p, z0, traj, y)? {
            (Some(a), Some(b)) => Ok(g.add(a, b)),
            (Some(a), None) | (None, Some(a)) => Ok(a),
            (None, None) => Err(Error::config("at least one likelihood term is required")),
        }
    }

    /// `-z0 + weight * grad_{z0} [log p(tau|z) + log p(y|z)]` with `z = U(z0)`.
    fn score(&self, z0: &Tensor, traj: Option<&EncodedTrajectory>, y: Option<f64>, weight: f64) -> Result<Tensor> {
        self.check_latent(z0, "z0")?;
        let mut score = z0.map(|v| -v);
        if (traj.is_none() && y.is_none()) || weight == 0.0 {
            return Ok(score);
        }
        if let Some(traj) = traj {
            self.check_traj(traj)?;
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.input(z0.clone());
        let (t, r) = self.likelihood_terms(&mut g, &p, x, traj, y)?;
        let total = match (t, r) {
            (Some(a), Some(b)) => g.add(a, b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!(),
        };
        g.check_finite(total, "log-likelihood")?;
        let grad = g.backward(total)?.take(x);
        score.axpy(weight, &grad);
        if !score.is_finite() {
            return Err(Error::NonFinite("score".into()));
        }
        Ok(score)
    }

    /// Score of `p(z0 | tau, y)` with optional likelihood terms switched off.
    pub fn posterior_score(&self, z0: &Tensor, traj: &EncodedTrajectory, y: f64, terms: ScoreTerms) -> Result<Tensor> {
        self.score(z0, terms.generator.then_some(traj), terms.returns.then_some(y), 1.0)
    }

    /// Guided score `-z0 + w * grad log p(y | U(z0))`.
    pub fn plan_score(&self, z0: &Tensor, y: f64, w: f64) -> Result<Tensor> {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::Domain(format!("guidance weight must be >= 0, got {w}")));
        }
        self.score(z0, None, Some(y), w)
    }

    /// Parameter gradients of the example log-likelihood at `z0`, which is
    /// treated as a constant.
    pub fn example_gradients(&self, z0: &Tensor, traj: &EncodedTrajectory, y: f64) -> Result<ExampleGradients> {
        self.check_latent(z0, "z0")?;
        self.check_traj(traj)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, true);
        let x = g.constant(z0.clone());
        let (t, r) = self.likelihood_terms(&mut g, &p, x, Some(traj), Some(y))?;
        let (t, r) = (t.expect("trajectory term"), r.expect("return term"));
        let total = g.add(t, r);
        g.check_finite(total, "log-likelihood")?;
        let grads = g.backward(total)?;
        Ok(ExampleGradients {
            params: ModelParams {
                prior: p.prior.collect(&grads),
                generator: p.generator.collect(&grads),
                returns: p.returns.collect(&grads),
            },
            traj_loglik: g.scalar(t),
            return_loglik: g.scalar(r),
        })
    }
}

fn init_params(config: &ModelConfig, rng: &mut RngStream) -> ModelParams {
    let d = config.latent_dim;
    ModelParams {
        prior: prior::init(&config.prior, d, rng),
        generator: generator::init(&config.generator, config.state_dim, &config.action_space, d, rng),
        returns: returns::init(&config.returns, d, rng),
    }
}

#[cfg(test)]
mod tests;
