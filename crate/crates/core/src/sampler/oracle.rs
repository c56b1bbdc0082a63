//! Conjugate linear-Gaussian configuration with identity prior:
//! `a_t | z ~ N(W z + c, I)` and `y | z ~ N(a^T z + b, sigma^2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ActionSpace, Actions, GeneratorConfig, LatentPlanModel, ModelConfig, PriorConfig, ReturnConfig, Trajectory,
};
use crate::numerics::{purpose, RngStream, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianSpec {
    pub latent_dim: usize,
    pub action_dim: usize,
    /// `[action_dim, latent_dim]`, row-major.
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
    pub sigma2: f64,
}

impl LinearGaussianSpec {
    /// Random instance with entries of `W` and `a` drawn from `N(0, scale^2)`.
    pub fn random(latent_dim: usize, action_dim: usize, scale: f64, sigma2: f64, rng: &mut RngStream) -> Self {
        let mut draw = |n: usize, sd: f64| (0..n).map(|_| sd * rng.standard_normal()).collect::<Vec<_>>();
        let w = draw(action_dim * latent_dim, scale);
        let c = draw(action_dim, 0.5);
        let a = draw(latent_dim, scale);
        let b = draw(1, 0.5)[0];
        Self { latent_dim, action_dim, w, c, a, b, sigma2 }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = (self.latent_dim, self.action_dim);
        if d == 0 || k == 0 {
            return Err(Error::config("linear-Gaussian dims must be positive"));
        }
        if self.w.len() != d * k || self.c.len() != k || self.a.len() != d {
            return Err(Error::shape("linear-Gaussian parameter sizes do not match the dims"));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::config("sigma2 must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim,
            state_dim: 1,
            action_space: ActionSpace::Continuous { dim: self.action_dim },
            prior: PriorConfig::Identity,
            generator: GeneratorConfig::Linear,
            returns: ReturnConfig::Linear,
            return_variance: self.sigma2,
        }
    }

    pub fn to_model(&self) -> Result<LatentPlanModel> {
        self.validate()?;
        let cfg = self.model_config();
        let mut m = LatentPlanModel::new(cfg, &mut RngStream::new(0, purpose::INIT))?;
        let (d, k) = (self.latent_dim, self.action_dim);
        let hw = m.params.generator.get_mut("head.w").expect("linear head");
        for i in 0..k {
            for j in 0..d {
                hw.data_mut()[j * k + i] = self.w[i * d + j];
            }
        }
        m.params.generator.get_mut("head.b").expect("linear head").data_mut().copy_from_slice(&self.c);
        m.params.returns.get_mut("out.w").expect("linear return").data_mut().copy_from_slice(&self.a);
        m.params.returns.get_mut("out.b").expect("linear return").data_mut()[0] = self.b;
        Ok(m)
    }

    /// Reads the spec back from a model with the linear configuration.
    pub fn from_model(m: &LatentPlanModel) -> Result<Self> {
        let cfg = &m.config;
        let ActionSpace::Continuous { dim: k } = cfg.action_space else {
            return Err(Error::config("linear-Gaussian needs continuous actions"));
        };
        if cfg.prior != PriorConfig::Identity
            || cfg.generator != GeneratorConfig::Linear
            || cfg.returns != ReturnConfig::Linear
        {
            return Err(Error::config("model is not in the linear-Gaussian configuration"));
        }
        let d = cfg.latent_dim;
        let get = |set: &crate::model::ParamSet, name: &str| {
            set.get(name).map(|t| t.data().to_vec()).ok_or_else(|| Error::validation(format!("missing {name}")))
        };
        let hw = get(&m.params.generator, "head.w")?;
        let mut w = vec![0.0; k * d];
        for i in 0..k {
            for j in 0..d {
                w[i * d + j] = hw[j * k + i];
            }
        }
        Ok(Self {
            latent_dim: d,
            action_dim: k,
            w,
            c: get(&m.params.generator, "head.b")?,
            a: get(&m.params.returns, "out.w")?,
            b: get(&m.params.returns, "out.b")?[0],
            sigma2: cfg.return_variance,
        })
    }

    /// Trajectory with constant placeholder states.
    pub fn trajectory(&self, actions: &[Vec<f64>]) -> Trajectory {
        Trajectory { states: vec![vec![0.0]; actions.len()], actions: Actions::Continuous(actions.to_vec()) }
    }

    /// Draws `z ~ N(0, I)`, then `horizon` actions and a return.
    pub fn sample(&self, horizon: usize, rng: &mut RngStream) -> (Trajectory, f64) {
        let (d, k) = (self.latent_dim, self.action_dim);
        let z = rng.normal_vec(d);
        let actions: Vec<Vec<f64>> = (0..horizon)
            .map(|_| {
                (0..k)
                    .map(|i| {
                        let mean: f64 = (0..d).map(|j| self.w[i * d + j] * z[j]).sum::<f64>() + self.c[i];
                        mean + rng.standard_normal()
                    })
                    .collect()
            })
            .collect();
        let mean_y: f64 = self.a.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>() + self.b;
        let y = mean_y + self.sigma2.sqrt() * rng.standard_normal();
        (self.trajectory(&actions), y)
    }

    fn w_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.action_dim, self.latent_dim, &self.w)
    }
}

/// `N(mean, precision^{-1})`, with the right-hand side that produced the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianOracle {
    pub dim: usize,
    /// Row-major `[dim, dim]`.
    pub precision: Vec<f64>,
    pub mean: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl GaussianOracle {
    fn solve(precision: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        let dim = rhs.len();
        let sym = (&precision - precision.transpose()).abs().max();
        if sym > 1e-12 * precision.abs().max().max(1.0) {
            return Err(Error::Domain("precision is not symmetric".into()));
        }
        let chol = precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("precision is not positive definite".into()))?;
        let mean = chol.solve(&rhs);
        Ok(Self {
            dim,
            precision: precision.transpose().as_slice().to_vec(),
            mean: mean.as_slice().to_vec(),
            rhs: rhs.as_slice().to_vec(),
        })
    }

    fn precision_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.precision)
    }

    /// Row-major covariance `precision^{-1}`.
    pub fn covariance(&self) -> Vec<f64> {
        let chol = self.precision_matrix().cholesky().expect("checked positive definite at construction");
        chol.inverse().transpose().as_slice().to_vec()
    }

    /// Score `precision (mean - z)`.
    pub fn score(&self, z: &[f64]) -> Vec<f64> {
        let diff = DVector::from_iterator(self.dim, self.mean.iter().zip(z).map(|(m, x)| m - x));
        (self.precision_matrix() * diff).as_slice().to_vec()
    }

    /// Residual `max |precision * mean - rhs|` of the linear solve.
    pub fn residual(&self) -> f64 {
        let m = DVector::from_column_slice(&self.mean);
        let r = self.precision_matrix() * m - DVector::from_column_slice(&self.rhs);
        r.abs().max()
    }

    /// Lower Cholesky factor of the covariance, row-major.
    pub fn covariance_factor(&self) -> Vec<f64> {
        let cov = DMatrix::from_row_slice(self.dim, self.dim, &self.covariance());
        let l = cov.cholesky().expect("covariance is positive definite").l();
        l.transpose().as_slice().to_vec()
    }

    /// Exact draws `mean + L eps` and `mean - L eps` for one `eps`.
    pub fn antithetic_pair(&self, factor: &[f64], rng: &mut RngStream) -> (Tensor, Tensor) {
        let d = self.dim;
        let eps = rng.normal_vec(d);
        let mut plus = self.mean.clone();
        let mut minus = self.mean.clone();
        for i in 0..d {
            let off: f64 = (0..=i).map(|j| factor[i * d + j] * eps[j]).sum();
            plus[i] += off;
            minus[i] -= off;
        }
        (Tensor::vector(plus), Tensor::vector(minus))
    }
}

fn check_actions(spec: &LinearGaussianSpec, actions: &[Vec<f64>]) -> Result<()> {
    spec.validate()?;
    if actions.iter().any(|a| a.len() != spec.action_dim) {
        return Err(Error::shape("action dimension does not match the spec"));
    }
    Ok(())
}

/// Exact posterior `p(z | tau, y)` of the linear-Gaussian configuration.
pub fn gaussian_oracle_solve(spec: &LinearGaussianSpec, actions: &[Vec<f64>], y: f64) -> Result<GaussianOracle> {
    check_actions(spec, actions)?;
    let d = spec.latent_dim;
    let w = spec.w_matrix();
    let a = DVector::from_column_slice(&spec.a);
    let c = DVector::from_column_slice(&spec.c);
    let t = actions.len() as f64;
    let precision = DMatrix::identity(d, d) + w.transpose() * &w * t + &a * a.transpose() / spec.sigma2;
    let mut rhs = &a * ((y - spec.b) / spec.sigma2);
    for act in actions {
        rhs += w.transpose() * (DVector::from_column_slice(act) - &c);
    }
    GaussianOracle::solve(precision, rhs)
}

/// Exact target of guided plan sampling: precision `I + w a a^T / sigma^2`.
pub fn plan_oracle(spec: &LinearGaussianSpec, y: f64, w: f64) -> Result<GaussianOracle> {
    spec.validate()?;
    let d = spec.latent_dim;
    let a = DVector::from_column_slice(&spec.a);
    let precision = DMatrix::identity(d, d) + &a * a.transpose() * (w / spec.sigma2);
    let rhs = &a * (w * (y - spec.b) / spec.sigma2);
    GaussianOracle::solve(precision, rhs)
}

/// Closed-form `log p(tau, y)` with `z` integrated out.
pub fn log_marginal(spec: &LinearGaussianSpec, actions: &[Vec<f64>], y: f64) -> Result<f64> {
    check_actions(spec, actions)?;
    let (d, k, t) = (spec.latent_dim, spec.action_dim, actions.len());
    let n = t * k + 1;
    let w = spec.w_matrix();
    let mut m = DMatrix::zeros(n, d);
    let mut x = DVector::zeros(n);
    let mut noise = DMatrix::identity(n, n);
    for (s, act) in actions.iter().enumerate() {
        m.view_mut((s * k, 0), (k, d)).copy_from(&w);
        for i in 0..k {
            x[s * k + i] = act[i] - spec.c[i];
        }
    }
    for j in 0..d {
        m[(n - 1, j)] = spec.a[j];
    }
    x[n - 1] = y - spec.b;
    noise[(n - 1, n - 1)] = spec.sigma2;
    let cov = &m * m.transpose() + noise;
    let chol = cov.cholesky().ok_or_else(|| Error::Domain("marginal covariance is not positive definite".into()))?;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let sol = chol.solve(&x);
    let quad = x.dot(&sol);
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad))
}

/// One conjugate test case: a spec with observed actions and return.
#[derive(Clone, Debug)]
pub struct FixtureInstance {
    pub spec: LinearGaussianSpec,
    pub actions: Vec<Vec<f64>>,
    pub y: f64,
}

impl FixtureInstance {
    pub fn trajectory(&self) -> Trajectory {
        self.spec.trajectory(&self.actions)
    }
}

/// Random instances whose posterior precision has eigenvalues in
/// `[1, max_eigen]`, so a fixed Langevin step keeps a bounded bias.
pub fn fixture_instances(count: usize, latent_dim: usize, horizon: usize, max_eigen: f64, seed: u64) -> Vec<FixtureInstance> {
    (0..count)
        .map(|i| {
            let mut rng = RngStream::derive(seed, purpose::FIXTURE, &[i as u64]);
            let mut spec = LinearGaussianSpec::random(latent_dim, 2, 0.5, 0.5, &mut rng);
            let top = |s: &LinearGaussianSpec| {
                let o = gaussian_oracle_solve(s, &vec![vec![0.0; 2]; horizon], 0.0).expect("valid spec");
                DMatrix::from_row_slice(latent_dim, latent_dim, &o.precision).symmetric_eigenvalues().max()
            };
            let lmax = top(&spec);
            if lmax > max_eigen {
                let f = ((max_eigen - 1.0) / (lmax - 1.0)).sqrt();
                spec.w.iter_mut().chain(spec.a.iter_mut()).for_each(|v| *v *= f);
            }
            let (traj, y) = spec.sample(horizon, &mut rng);
            let Actions::Continuous(actions) = traj.actions else { unreachable!() };
            FixtureInstance { spec, actions, y }
        })
        .collect()
}
