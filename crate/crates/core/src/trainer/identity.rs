//! The posterior-expectation form of the marginal-likelihood gradient,
//! checked on the conjugate configuration where both sides are computable.

use crate::error::Result;
use crate::model::{EncodedTrajectory, LatentPlanModel};
use crate::numerics::RngStream;
use crate::sampler::{gaussian_oracle_solve, log_marginal, LinearGaussianSpec};

fn flat_params(m: &LatentPlanModel) -> Vec<f64> {
    let mut v = m.params.generator.flatten();
    v.extend(m.params.returns.flatten());
    v
}

/// Monte-Carlo estimate of `E_{p(z|tau,y)} grad_theta log p(tau, y | z)`
/// from `samples` exact antithetic posterior draws, flattened as generator
/// then return parameters.
pub fn posterior_gradient_estimate(
    spec: &LinearGaussianSpec,
    actions: &[Vec<f64>],
    y: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let model = spec.to_model()?;
    let enc = EncodedTrajectory::encode(&spec.trajectory(actions), &model.config.action_space, None)?;
    let oracle = gaussian_oracle_solve(spec, actions, y)?;
    let factor = oracle.covariance_factor();
    let pairs = samples.div_ceil(2).max(1);
    let mut acc = vec![0.0; model.params.generator.num_values() + model.params.returns.num_values()];
    for _ in 0..pairs {
        let (zp, zm) = oracle.antithetic_pair(&factor, rng);
        for z in [zp, zm] {
            let g = model.example_gradients(&z, &enc, y)?;
            let mut flat = g.params.generator.flatten();
            flat.extend(g.params.returns.flatten());
            for (a, v) in acc.iter_mut().zip(flat) {
                *a += v;
            }
        }
    }
    let n = (2 * pairs) as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Central differences of the closed-form log marginal likelihood in the
/// same parameter order.
pub fn marginal_gradient(spec: &LinearGaussianSpec, actions: &[Vec<f64>], y: f64, eps: f64) -> Result<Vec<f64>> {
    let model = spec.to_model()?;
    let base = flat_params(&model);
    let ng = model.params.generator.num_values();
    let eval = |flat: &[f64]| -> Result<f64> {
        let mut m = model.clone();
        m.params.generator.assign_flat(&flat[..ng])?;
        m.params.returns.assign_flat(&flat[ng..])?;
        log_marginal(&LinearGaussianSpec::from_model(&m)?, actions, y)
    };
    let mut probe = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        let fp = eval(&probe)?;
        probe[i] = base[i] - eps;
        let fm = eval(&probe)?;
        probe[i] = base[i];
        out.push((fp - fm) / (2.0 * eps));
    }
    Ok(out)
}

/// `max_i |est_i - ref_i| / max(1, |ref_i|)`.
pub fn relative_error(estimate: &[f64], reference: &[f64]) -> f64 {
    estimate.iter().zip(reference).map(|(e, r)| (e - r).abs() / r.abs().max(1.0)).fold(0.0, f64::max)
}
