//! Trajectory generator `p(a_t | s_{t-K+1..t}, a_{t-K..t-1}, z)`.
//!
//! Each step is one token: the embedded state plus the embedded previous
//! action. Self-attention in layer `l` only sees the last `w_l` tokens, with
//! `sum_l (w_l - 1) = K - 1`, so a single pass over a whole trajectory gives
//! every step exactly its `K`-step context. Positions enter only through a
//! learned bias on the query-key offset, which keeps outputs invariant to
//! where the window starts.

use super::config::{ActionSpace, GeneratorConfig};
use super::layers::{layer_norm, linear, ones_column};
use super::params::{Bound, Init, ParamSet};
use super::trajectory::{EncodedTrajectory, Targets};
use crate::error::Result;
use crate::numerics::{Graph, RngStream, Tensor, Var};

const HEAD_INIT_STD: f64 = 0.02;

/// Per-layer self-attention windows whose combined receptive field is
/// `context` steps.
pub fn attention_windows(context: usize, layers: usize) -> Vec<usize> {
    let extra = context.saturating_sub(1);
    let (base, rem) = (extra / layers, extra % layers);
    (0..layers).map(|l| 1 + base + usize::from(l < rem)).collect()
}

pub(crate) fn init(
    cfg: &GeneratorConfig,
    state_dim: usize,
    space: &ActionSpace,
    latent_dim: usize,
    rng: &mut RngStream,
) -> ParamSet {
    let mut init = Init::new(rng);
    let out = space.head_width();
    match cfg {
        GeneratorConfig::Linear => {
            init.normal("head.w", &[latent_dim, out], (1.0 / latent_dim as f64).sqrt());
            init.zeros("head.b", &[out]);
        }
        GeneratorConfig::Transformer { hidden, layers, heads, context, z_tokens } => {
            let h = *hidden;
            let dh = h / heads;
            let ztok = latent_dim / z_tokens;
            init.normal("embed.state.w", &[state_dim, h], (1.0 / state_dim as f64).sqrt());
            init.normal("embed.action.w", &[space.input_width(), h], 1.0);
            init.zeros("embed.b", &[h]);
            init.normal("ztok.w", &[ztok, h], (1.0 / ztok as f64).sqrt());
            init.normal("ztok.pos", &[*z_tokens, h], HEAD_INIT_STD);
            for (l, w) in attention_windows(*context, *layers).into_iter().enumerate() {
                let b = format!("blocks.{l}");
                init.layer_norm(&format!("{b}.ln1"), h);
                for e in 0..*heads {
                    for m in ["q", "k", "v"] {
                        init.normal(format!("{b}.attn.{e}.{m}"), &[h, dh], (1.0 / h as f64).sqrt());
                    }
                    init.normal(format!("{b}.attn.{e}.o"), &[dh, h], (1.0 / h as f64).sqrt());
                }
                init.zeros(format!("{b}.attn.o_b"), &[h]);
                init.zeros(format!("{b}.attn.rel"), &[w]);
                init.layer_norm(&format!("{b}.ln2"), h);
                for m in ["q", "k", "v", "o"] {
                    init.normal(format!("{b}.cross.{m}"), &[h, h], (1.0 / h as f64).sqrt());
                }
                init.zeros(format!("{b}.cross.o_b"), &[h]);
                init.layer_norm(&format!("{b}.ln3"), h);
                init.linear(&format!("{b}.mlp.in"), h, 2 * h);
                init.linear(&format!("{b}.mlp.out"), 2 * h, h);
            }
            init.layer_norm("ln_f", h);
            init.normal("head.w", &[h, out], HEAD_INIT_STD);
            init.zeros("head.b", &[out]);
        }
    }
    init.finish()
}

fn window_mask(t: usize, w: usize) -> Vec<bool> {
    let mut m = vec![false; t * t];
    for i in 0..t {
        for j in i.saturating_sub(w - 1)..=i {
            m[i * t + j] = true;
        }
    }
    m
}

/// `[T, T]` matrix whose `(i, j)` entry is `rel[i - j]` inside the window.
fn relative_bias(g: &mut Graph<'_>, rel: Var, t: usize, w: usize) -> Var {
    let mut sel = Tensor::zeros(&[t * t, w]);
    for i in 0..t {
        for j in i.saturating_sub(w - 1)..=i {
            sel.data_mut()[(i * t + j) * w + (i - j)] = 1.0;
        }
    }
    let sel = g.constant(sel);
    let rel = g.reshape(rel, &[w, 1]);
    let b = g.matmul(sel, rel);
    g.reshape(b, &[t, t])
}

fn self_attention(g: &mut Graph<'_>, p: &Bound<'_>, prefix: &str, x: Var, heads: usize, w: usize) -> Var {
    let t = g.value(x).rows();
    let h = g.value(x).cols();
    let scale = 1.0 / ((h / heads) as f64).sqrt();
    let mask = window_mask(t, w);
    let bias = relative_bias(g, p.var(&format!("{prefix}.rel")), t, w);
    let mut acc: Option<Var> = None;
    for e in 0..heads {
        let q = g.matmul(x, p.var(&format!("{prefix}.{e}.q")));
        let k = g.matmul(x, p.var(&format!("{prefix}.{e}.k")));
        let v = g.matmul(x, p.var(&format!("{prefix}.{e}.v")));
        let s = g.matmul_nt(q, k);
        let s = g.scale(s, scale);
        let s = g.add(s, bias);
        let a = g.softmax(s, Some(&mask));
        let o = g.matmul(a, v);
        let o = g.matmul(o, p.var(&format!("{prefix}.{e}.o")));
        acc = Some(match acc {
            Some(prev) => g.add(prev, o),
            None => o,
        });
    }
    let out = acc.expect("at least one head");
    g.add_row(out, p.var(&format!("{prefix}.o_b")))
}

fn cross_attention(g: &mut Graph<'_>, p: &Bound<'_>, prefix: &str, x: Var, ztok: Var) -> Var {
    let h = g.value(x).cols();
    let q = g.matmul(x, p.var(&format!("{prefix}.q")));
    let k = g.matmul(ztok, p.var(&format!("{prefix}.k")));
    let v = g.matmul(ztok, p.var(&format!("{prefix}.v")));
    let s = g.matmul_nt(q, k);
    let s = g.scale(s, 1.0 / (h as f64).sqrt());
    let a = g.softmax(s, None);
    let o = g.matmul(a, v);
    let o = g.matmul(o, p.var(&format!("{prefix}.o")));
    g.add_row(o, p.var(&format!("{prefix}.o_b")))
}

/// Head output for every step: `[T, head width]` means or logits.
pub(crate) fn forward(
    g: &mut Graph<'_>,
    cfg: &GeneratorConfig,
    p: &Bound<'_>,
    states: &Tensor,
    prev_actions: &Tensor,
    z: Var,
) -> Var {
    let t = states.rows();
    let d = g.value(z).len();
    match cfg {
        GeneratorConfig::Linear => {
            let zr = g.reshape(z, &[1, d]);
            let mean = linear(g, p, "head", zr);
            let ones = ones_column(g, t);
            g.matmul(ones, mean)
        }
        GeneratorConfig::Transformer { layers, heads, context, z_tokens, .. } => {
            let xs = g.constant(states.clone());
            let xa = g.constant(prev_actions.clone());
            let es = g.matmul(xs, p.var("embed.state.w"));
            let ea = g.matmul(xa, p.var("embed.action.w"));
            let x = g.add(es, ea);
            let mut x = g.add_row(x, p.var("embed.b"));

            let zr = g.reshape(z, &[*z_tokens, d / z_tokens]);
            let zt = g.matmul(zr, p.var("ztok.w"));
            let zt = g.add(zt, p.var("ztok.pos"));

            for (l, w) in attention_windows(*context, *layers).into_iter().enumerate() {
                let b = format!("blocks.{l}");
                let a = layer_norm(g, p, &format!("{b}.ln1"), x);
                let a = self_attention(g, p, &format!("{b}.attn"), a, *heads, w);
                x = g.add(x, a);
                let c = layer_norm(g, p, &format!("{b}.ln2"), x);
                let c = cross_attention(g, p, &format!("{b}.cross"), c, zt);
                x = g.add(x, c);
                let f = layer_norm(g, p, &format!("{b}.ln3"), x);
                let f = linear(g, p, &format!("{b}.mlp.in"), f);
                let f = g.relu(f);
                let f = linear(g, p, &format!("{b}.mlp.out"), f);
                x = g.add(x, f);
            }
            let x = layer_norm(g, p, "ln_f", x);
            linear(g, p, "head", x)
        }
    }
}

/// `sum_t log p(a_t | window_t, z)`; only actions are scored.
pub(crate) fn log_likelihood(
    g: &mut Graph<'_>,
    cfg: &GeneratorConfig,
    p: &Bound<'_>,
    traj: &EncodedTrajectory,
    z: Var,
) -> Result<Var> {
    let head = forward(g, cfg, p, &traj.states, &traj.prev_actions, z);
    match &traj.targets {
        Targets::Discrete(a) => {
            let ls = g.log_softmax(head);
            let picked = g.pick(ls, a);
            Ok(g.sum(picked))
        }
        Targets::Continuous(a) => {
            let target = g.constant(a.clone());
            g.gaussian_logpdf(target, head, 1.0)
        }
    }
}
