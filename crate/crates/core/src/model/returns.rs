//! Return predictor `p(y | z) = N(r(z), sigma^2)`.

use super::config::ReturnConfig;
use super::layers::linear;
use super::params::{Bound, Init, ParamSet};
use crate::error::Result;
use crate::numerics::{Graph, RngStream, Var};

pub(crate) fn init(cfg: &ReturnConfig, d: usize, rng: &mut RngStream) -> ParamSet {
    let mut init = Init::new(rng);
    match cfg {
        ReturnConfig::Linear => init.linear("out", d, 1),
        ReturnConfig::Mlp { hidden } => {
            init.linear("fc1", d, *hidden);
            init.linear("fc2", *hidden, *hidden);
            init.linear("out", *hidden, 1);
        }
    }
    init.finish()
}

/// `r(z)` as a 1x1 value.
pub(crate) fn predict(g: &mut Graph<'_>, cfg: &ReturnConfig, p: &Bound<'_>, z: Var) -> Var {
    let d = g.value(z).len();
    let x = g.reshape(z, &[1, d]);
    match cfg {
        ReturnConfig::Linear => linear(g, p, "out", x),
        ReturnConfig::Mlp { .. } => {
            let h = linear(g, p, "fc1", x);
            let h = g.relu(h);
            let h = linear(g, p, "fc2", h);
            let h = g.relu(h);
            linear(g, p, "out", h)
        }
    }
}

pub(crate) fn log_likelihood(
    g: &mut Graph<'_>,
    cfg: &ReturnConfig,
    p: &Bound<'_>,
    z: Var,
    y: f64,
    variance: f64,
) -> Result<Var> {
    let r = predict(g, cfg, p, z);
    let target = g.constant(crate::numerics::Tensor::filled(&[1, 1], y));
    g.gaussian_logpdf(target, r, variance)
}
