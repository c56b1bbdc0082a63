//! Composite blocks expressed in the graph's primitive set.

use super::params::Bound;
use crate::numerics::{Graph, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// `x · W + b` with `prefix.w` `[in, out]` and `prefix.b` `[out]`.
pub fn linear(g: &mut Graph<'_>, p: &Bound<'_>, prefix: &str, x: Var) -> Var {
    let h = g.matmul(x, p.var(&format!("{prefix}.w")));
    g.add_row(h, p.var(&format!("{prefix}.b")))
}

pub fn layer_norm(g: &mut Graph<'_>, p: &Bound<'_>, prefix: &str, x: Var) -> Var {
    let mu = g.mean_cols(x);
    let xc = g.sub_col(x, mu);
    let sq = g.square(xc);
    let var = g.mean_cols(sq);
    let var = g.add_scalar(var, LN_EPS);
    let inv = g.powf(var, -0.5);
    let y = g.mul_col(xc, inv);
    let y = g.mul_row(y, p.var(&format!("{prefix}.gain")));
    g.add_row(y, p.var(&format!("{prefix}.bias")))
}

/// Constant `[rows, 1]` column of ones, used to broadcast a row vector.
pub fn ones_column(g: &mut Graph<'_>, rows: usize) -> Var {
    g.constant(Tensor::filled(&[rows, 1], 1.0))
}

/// Stacks `[l, c1]` and `[l, c2]` side by side as `[l, c1 + c2]` using two
/// constant selection matrices.
pub fn concat_cols(g: &mut Graph<'_>, a: Var, b: Var) -> Var {
    let c1 = g.value(a).cols();
    let c2 = g.value(b).cols();
    let total = c1 + c2;
    let mut e1 = Tensor::zeros(&[c1, total]);
    for i in 0..c1 {
        e1.data_mut()[i * total + i] = 1.0;
    }
    let mut e2 = Tensor::zeros(&[c2, total]);
    for i in 0..c2 {
        e2.data_mut()[i * total + c1 + i] = 1.0;
    }
    let e1 = g.constant(e1);
    let e2 = g.constant(e2);
    let pa = g.matmul(a, e1);
    let pb = g.matmul(b, e2);
    g.add(pa, pb)
}
