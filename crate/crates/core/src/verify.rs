//! Self-checks runnable from the command line: finite-difference gradient
//! checks, Langevin stationarity and agreement with the conjugate oracle.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ActionSpace, Actions, EncodedTrajectory, GeneratorConfig, LatentPlanModel, ModelConfig, PriorConfig, ReturnConfig,
    ScoreTerms, Trajectory,
};
use crate::numerics::{compare_gradients, gaussian_sample, grad, purpose, Graph, RngStream, Tensor, Var};
use crate::sampler::{
    gaussian_oracle_solve, plan_oracle, relative_frobenius, run_chain, sample_moments, sample_plan, sample_posterior,
    ula_stationary_variance, FixtureInstance, LangevinConfig, LinearGaussianSpec,
};
use crate::trainer::{marginal_gradient, posterior_gradient_estimate, relative_error};

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
const FD_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Gradcheck,
    Langevin,
    Oracle,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Suite::Gradcheck),
            "langevin" => Ok(Suite::Langevin),
            "oracle" => Ok(Suite::Oracle),
            "all" => Ok(Suite::All),
            other => Err(Error::config(format!("unknown suite {other:?} (gradcheck, langevin, oracle, all)"))),
        }
    }
}

/// One measured quantity against its threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), passed: value <= threshold, value, threshold, detail: String::new() }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict}  {:<44} {:>12.4e}  (limit {:.1e})", self.name, self.value, self.threshold)?;
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Name of a gradient check whose analytic gradient is deliberately
    /// perturbed, to confirm the checker notices.
    pub corrupt: Option<String>,
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Gradcheck | Suite::All) {
        out.extend(gradcheck_suite(opts)?);
    }
    if matches!(suite, Suite::Langevin | Suite::All) {
        out.extend(langevin_suite(opts)?);
    }
    if matches!(suite, Suite::Oracle | Suite::All) {
        out.extend(oracle_suite(opts)?);
    }
    Ok(out)
}

type Objective = Box<dyn Fn(&mut Graph<'_>, &[Var]) -> Result<Var> + Sync>;

/// Weighted sum with fixed, non-symmetric weights so every output entry
/// matters to the gradient.
fn project(g: &mut Graph<'_>, x: Var) -> Var {
    let shape = g.value(x).shape().to_vec();
    let n = g.value(x).len();
    let w = Tensor::new(shape, (0..n).map(|i| (0.7 * i as f64 + 0.3).sin()).collect()).expect("matching length");
    let w = g.constant(w);
    let y = g.mul(x, w);
    g.sum(y)
}

fn primitive_checks() -> Vec<(&'static str, Vec<Vec<usize>>, Objective)> {
    let unary = |f: fn(&mut Graph<'_>, Var) -> Var| -> Objective {
        Box::new(move |g, v| {
            let y = f(g, v[0]);
            Ok(project(g, y))
        })
    };
    let binary = |f: fn(&mut Graph<'_>, Var, Var) -> Var| -> Objective {
        Box::new(move |g, v| {
            let y = f(g, v[0], v[1]);
            Ok(project(g, y))
        })
    };
    let m = vec![3, 4];
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], binary(|g, a, b| g.matmul(a, b))),
        ("matmul_nt", vec![vec![3, 4], vec![2, 4]], binary(|g, a, b| g.matmul_nt(a, b))),
        ("add", vec![m.clone(), m.clone()], binary(|g, a, b| g.add(a, b))),
        ("sub", vec![m.clone(), m.clone()], binary(|g, a, b| g.sub(a, b))),
        ("mul", vec![m.clone(), m.clone()], binary(|g, a, b| g.mul(a, b))),
        ("add_row", vec![m.clone(), vec![4]], binary(|g, a, b| g.add_row(a, b))),
        ("mul_row", vec![m.clone(), vec![4]], binary(|g, a, b| g.mul_row(a, b))),
        ("sub_col", vec![m.clone(), vec![3]], binary(|g, a, b| g.sub_col(a, b))),
        ("mul_col", vec![m.clone(), vec![3]], binary(|g, a, b| g.mul_col(a, b))),
        ("scale", vec![m.clone()], unary(|g, a| g.scale(a, -1.7))),
        ("add_scalar", vec![m.clone()], unary(|g, a| g.add_scalar(a, 0.4))),
        ("relu", vec![m.clone()], unary(|g, a| g.relu(a))),
        ("tanh", vec![m.clone()], unary(|g, a| g.tanh(a))),
        ("sin", vec![m.clone()], unary(|g, a| g.sin(a))),
        ("exp", vec![m.clone()], unary(|g, a| g.exp(a))),
        ("square", vec![m.clone()], unary(|g, a| g.square(a))),
        (
            "powf",
            vec![m.clone()],
            unary(|g, a| {
                let s = g.square(a);
                let s = g.add_scalar(s, 0.5);
                g.powf(s, -0.5)
            }),
        ),
        ("softmax", vec![m.clone()], unary(|g, a| g.softmax(a, None))),
        (
            "softmax_masked",
            vec![vec![3, 3]],
            unary(|g, a| g.softmax(a, Some(&[true, false, false, true, true, false, true, true, true]))),
        ),
        ("log_softmax", vec![m.clone()], unary(|g, a| g.log_softmax(a))),
        ("pick", vec![m.clone()], unary(|g, a| g.pick(a, &[3, 0, 2]))),
        ("sum", vec![m.clone()], unary(|g, a| g.sum(a))),
        ("mean_cols", vec![m.clone()], unary(|g, a| g.mean_cols(a))),
        ("reshape", vec![m.clone()], unary(|g, a| g.reshape(a, &[2, 6]))),
        ("conv1d", vec![vec![5, 2], vec![3, 2, 3]], binary(|g, x, w| g.conv1d(x, w))),
        (
            "gaussian_logpdf",
            vec![m.clone(), m],
            Box::new(|g, v| g.gaussian_logpdf(v[0], v[1], 0.6)),
        ),
    ]
}

fn graded(name: &str, objective: &Objective, inputs: &[Tensor], opts: &VerifyOptions) -> Result<Check> {
    let (_, mut analytic) = grad(objective, inputs)?;
    if opts.corrupt.as_deref() == Some(name) {
        analytic[0].data_mut()[0] += 0.1;
    }
    let err = compare_gradients(objective, inputs, &analytic, FD_EPSILON)?;
    Ok(Check::at_most(format!("gradcheck {name}"), err, GRADCHECK_TOLERANCE))
}

fn randomized(cfg: ModelConfig, seed: u64) -> Result<LatentPlanModel> {
    let mut rng = RngStream::derive(seed, purpose::FIXTURE, &[0]);
    let mut m = LatentPlanModel::new(cfg, &mut rng)?;
    for group in m.params.groups_mut() {
        for p in group.iter_mut() {
            for v in p.tensor.data_mut() {
                *v = 0.4 * rng.standard_normal();
            }
        }
    }
    Ok(m)
}

fn random_traj(space: &ActionSpace, state_dim: usize, len: usize, rng: &mut RngStream) -> Trajectory {
    let states = (0..len).map(|_| rng.normal_vec(state_dim)).collect();
    let actions = match space {
        ActionSpace::Discrete { n } => Actions::Discrete((0..len).map(|_| rng.below(*n)).collect()),
        ActionSpace::Continuous { dim } => Actions::Continuous((0..len).map(|_| rng.normal_vec(*dim)).collect()),
    };
    Trajectory { states, actions }
}

/// Network configurations covering every prior, generator and return head.
fn block_configs() -> Vec<(&'static str, ModelConfig)> {
    let base = |space: ActionSpace| ModelConfig {
        latent_dim: 8,
        state_dim: 3,
        action_space: space,
        prior: PriorConfig::Identity,
        generator: GeneratorConfig::Linear,
        returns: ReturnConfig::Linear,
        return_variance: 0.25,
    };
    let transformer = GeneratorConfig::Transformer { hidden: 8, layers: 2, heads: 2, context: 4, z_tokens: 2 };
    vec![
        (
            "unet prior + transformer (discrete) + mlp return",
            ModelConfig {
                prior: PriorConfig::Unet { channels: 2, base_width: 4, multipliers: vec![1, 2], res_blocks: 1 },
                generator: transformer.clone(),
                returns: ReturnConfig::Mlp { hidden: 6 },
                ..base(ActionSpace::Discrete { n: 4 })
            },
        ),
        (
            "res-mlp prior + transformer (continuous) + linear return",
            ModelConfig {
                prior: PriorConfig::ResMlp { hidden: 5, blocks: 2 },
                generator: transformer,
                ..base(ActionSpace::Continuous { dim: 2 })
            },
        ),
        ("identity prior + linear generator", base(ActionSpace::Continuous { dim: 2 })),
    ]
}

/// Latent score against differences of the log joint, and a sample of
/// parameter-gradient coordinates against differences of the example
/// log-likelihood.
fn block_checks(name: &str, cfg: ModelConfig, seed: u64, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let m = randomized(cfg, seed)?;
    let mut rng = RngStream::derive(seed, purpose::FIXTURE, &[1]);
    let space = m.config.action_space.clone();
    let enc = EncodedTrajectory::encode(&random_traj(&space, m.config.state_dim, 5, &mut rng), &space, None)?;
    let y = 0.6;
    let z0 = gaussian_sample(&[m.latent_dim()], &mut rng)?;

    let mut score = m.posterior_score(&z0, &enc, y, ScoreTerms::ALL)?;
    let latent_name = format!("{name} / latent score");
    if opts.corrupt.as_deref() == Some(latent_name.as_str()) {
        score.data_mut()[0] += 0.1;
    }
    let log_joint = |g: &mut Graph<'_>, v: &[Var]| {
        let ll = m.log_likelihood_graph(g, v[0], Some(&enc), Some(y))?;
        let sq = g.square(v[0]);
        let sq = g.sum(sq);
        let prior = g.scale(sq, -0.5);
        Ok(g.add(ll, prior))
    };
    let mut out = vec![Check::at_most(
        format!("gradcheck {latent_name}"),
        compare_gradients(&log_joint, std::slice::from_ref(&z0), &[score], FD_EPSILON)?,
        GRADCHECK_TOLERANCE,
    )];

    let grads = m.example_gradients(&z0, &enc, y)?;
    let objective = |mm: &LatentPlanModel| -> Result<f64> {
        let zz = mm.prior_transform(&z0)?;
        Ok(mm.traj_loglik(&enc, &zz)? + mm.return_loglik(y, &zz)?)
    };
    for (group, label) in ["prior", "generator", "returns"].into_iter().enumerate() {
        let n = m.params.groups()[group].num_values();
        if n == 0 {
            continue;
        }
        let check_name = format!("{name} / {label} params");
        let mut analytic = grads.params.groups()[group].flatten();
        if opts.corrupt.as_deref() == Some(check_name.as_str()) {
            analytic.iter_mut().for_each(|v| *v += 0.1);
        }
        let mut worst = 0.0f64;
        for _ in 0..12.min(n) {
            let i = rng.below(n);
            let mut probe = m.clone();
            let mut flat = probe.params.groups()[group].flatten();
            let x = flat[i];
            flat[i] = x + FD_EPSILON;
            probe.params.groups_mut()[group].assign_flat(&flat)?;
            let fp = objective(&probe)?;
            flat[i] = x - FD_EPSILON;
            probe.params.groups_mut()[group].assign_flat(&flat)?;
            let fm = objective(&probe)?;
            let numeric = (fp - fm) / (2.0 * FD_EPSILON);
            worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
        }
        out.push(Check::at_most(format!("gradcheck {check_name}"), worst, GRADCHECK_TOLERANCE));
    }
    Ok(out)
}

pub fn gradcheck_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (k, (name, shapes, objective)) in primitive_checks().into_iter().enumerate() {
        let mut rng = RngStream::derive(opts.seed, purpose::FIXTURE, &[100, k as u64]);
        let inputs = shapes.iter().map(|s| gaussian_sample(s, &mut rng)).collect::<Result<Vec<_>>>()?;
        out.push(graded(name, &objective, &inputs, opts)?);
    }
    for (k, (name, cfg)) in block_configs().into_iter().enumerate() {
        out.extend(block_checks(name, cfg, opts.seed.wrapping_add(k as u64), opts)?);
    }
    Ok(out)
}

/// Empirical variance of ULA on `N(0, 1)` against its discrete-time fixed point.
pub fn ula_stationarity(chains: usize, steps: usize, step_size: f64, seed: u64) -> Result<Check> {
    let cfg = LangevinConfig::new(step_size, steps);
    let finals: Vec<f64> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut r = RngStream::derive(seed, purpose::ORACLE, &[0, c as u64]);
            let z0 = Tensor::vector(vec![r.standard_normal()]);
            run_chain(&z0, &cfg, &mut r, |z| Ok(z.map(|v| -v))).map(|z| z.item())
        })
        .collect::<Result<_>>()?;
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
    let target = ula_stationary_variance(1.0, step_size);
    Ok(Check::at_most("ula stationary variance (relative error)", (var / target - 1.0).abs(), 0.05)
        .with_detail(format!("variance {var:.5} vs {target:.5}")))
}

pub fn langevin_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let cfg = LangevinConfig { noise_scale: 0.0, ..LangevinConfig::new(0.1, 1) };
    let z = run_chain(&Tensor::vector(vec![1.0]), &cfg, &mut RngStream::new(opts.seed, 0), |z| Ok(z.map(|v| -v)))?;
    Ok(vec![
        Check::at_most("noise-free step on N(0,1) from 1", (z.item() - 0.9).abs(), 1e-15),
        ula_stationarity(10_000, 200, 0.1, opts.seed)?,
    ])
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Posterior sample moments for one fixture instance against the oracle:
/// `(mean inf-norm error, relative covariance Frobenius error)`.
pub fn posterior_moment_errors(inst: &FixtureInstance, chains: usize, cfg: &LangevinConfig, seed: u64) -> Result<(f64, f64)> {
    let model = inst.spec.to_model()?;
    let enc = EncodedTrajectory::encode(&inst.trajectory(), &model.config.action_space, None)?;
    let oracle = gaussian_oracle_solve(&inst.spec, &inst.actions, inst.y)?;
    let samples: Vec<Tensor> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut r = RngStream::derive(seed, purpose::ORACLE, &[1, c as u64]);
            let init = gaussian_sample(&[model.latent_dim()], &mut r)?;
            sample_posterior(&model, &enc, inst.y, cfg, &init, &mut r)
        })
        .collect::<Result<_>>()?;
    let (mean, cov) = sample_moments(&samples);
    Ok((max_abs_diff(&mean, &oracle.mean), relative_frobenius(&cov, &oracle.covariance())))
}

/// Guided plan variance along `a` for each weight, with the closed-form value.
pub fn guided_variances(
    spec: &LinearGaussianSpec,
    y: f64,
    weights: &[f64],
    chains: usize,
    cfg: &LangevinConfig,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let model = spec.to_model()?;
    let norm = spec.a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dir: Vec<f64> = spec.a.iter().map(|v| v / norm).collect();
    weights
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let c = cfg.clone().with_guidance(w);
            let proj: Vec<f64> = (0..chains)
                .into_par_iter()
                .map(|i| {
                    let mut r = RngStream::derive(seed, purpose::ORACLE, &[2, k as u64, i as u64]);
                    let z = sample_plan(&model, y, &c, &mut r)?;
                    Ok(z.data().iter().zip(&dir).map(|(a, b)| a * b).sum())
                })
                .collect::<Result<_>>()?;
            let n = proj.len() as f64;
            let m = proj.iter().sum::<f64>() / n;
            let var = proj.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n;
            let o = plan_oracle(spec, y, w)?;
            let d = spec.latent_dim;
            let cov = o.covariance();
            let closed: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| dir[i] * cov[i * d + j] * dir[j]).sum();
            Ok((w, var, closed))
        })
        .collect()
}

/// Exact-posterior Monte-Carlo gradient against differences of the log
/// marginal likelihood.
pub fn gradient_identity_error(inst: &FixtureInstance, samples: usize, seed: u64, replicate: u64) -> Result<f64> {
    let reference = marginal_gradient(&inst.spec, &inst.actions, inst.y, 1e-5)?;
    let mut rng = RngStream::derive(seed, purpose::ORACLE, &[3, samples as u64, replicate]);
    let est = posterior_gradient_estimate(&inst.spec, &inst.actions, inst.y, samples, &mut rng)?;
    Ok(relative_error(&est, &reference))
}

pub fn oracle_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let instances = crate::sampler::fixture_instances(3, 4, 3, 2.5, opts.seed);
    let cfg = LangevinConfig::new(0.05, 500);
    for (i, inst) in instances.iter().enumerate() {
        let (mean, cov) = posterior_moment_errors(inst, 2000, &cfg, opts.seed + i as u64)?;
        out.push(Check::at_most(format!("posterior mean vs oracle, instance {i}"), mean, 0.05));
        out.push(Check::at_most(format!("posterior covariance vs oracle, instance {i}"), cov, 0.10));
    }
    let spec = LinearGaussianSpec {
        latent_dim: 3,
        action_dim: 1,
        w: vec![0.0; 3],
        c: vec![0.0],
        a: vec![0.3, -0.2, 0.2],
        b: 0.1,
        sigma2: 0.25,
    };
    let vars = guided_variances(&spec, 1.0, &[1.0, 2.0, 4.0], 2000, &LangevinConfig::new(0.02, 400), opts.seed)?;
    let increases = vars.windows(2).filter(|p| p[1].1 > p[0].1).count();
    out.push(Check::at_most("guided variance increases over w in {1,2,4}", increases as f64, 0.0));
    for (w, var, closed) in vars {
        out.push(Check::at_most(format!("guided variance vs closed form, w={w}"), (var / closed - 1.0).abs(), 0.10));
    }
    let inst = &instances[0];
    let err = gradient_identity_error(inst, 40_000, opts.seed, 0)?;
    out.push(Check::at_most("gradient identity, 4e4 exact posterior draws", err, 0.02));
    Ok(out)
}
