//! Prior transform `z = U(z0)` from Gaussian noise to the plan.

use super::config::PriorConfig;
use super::layers::{concat_cols, linear};
use super::params::{Bound, Init, ParamSet};
use crate::numerics::{Graph, RngStream, Tensor, Var};

struct UnetShape {
    channels: usize,
    length: usize,
    widths: Vec<usize>,
    res_blocks: usize,
    base: usize,
}

fn unet_shape(cfg: &PriorConfig, d: usize) -> Option<UnetShape> {
    match cfg {
        PriorConfig::Unet { channels, base_width, multipliers, res_blocks } => Some(UnetShape {
            channels: *channels,
            length: d / channels,
            widths: multipliers.iter().map(|m| m * base_width).collect(),
            res_blocks: *res_blocks,
            base: *base_width,
        }),
        _ => None,
    }
}

fn init_conv(init: &mut Init<'_>, prefix: &str, k: usize, cin: usize, cout: usize) {
    init.normal(format!("{prefix}.w"), &[k, cin, cout], (2.0 / (k * cin) as f64).sqrt());
    init.zeros(format!("{prefix}.b"), &[cout]);
}

fn init_res_block(init: &mut Init<'_>, prefix: &str, cin: usize, cout: usize) {
    init_conv(init, &format!("{prefix}.conv1"), 3, cin, cout);
    init_conv(init, &format!("{prefix}.conv2"), 3, cout, cout);
    if cin != cout {
        init.normal(format!("{prefix}.skip"), &[cin, cout], (1.0 / cin as f64).sqrt());
    }
}

pub(crate) fn init(cfg: &PriorConfig, d: usize, rng: &mut RngStream) -> ParamSet {
    let mut init = Init::new(rng);
    match cfg {
        PriorConfig::Identity => {}
        PriorConfig::Unet { .. } => {
            let s = unet_shape(cfg, d).expect("unet config");
            init_conv(&mut init, "conv_in", 3, s.channels, s.base);
            let mut ch = s.base;
            for (i, &w) in s.widths.iter().enumerate() {
                for j in 0..s.res_blocks {
                    init_res_block(&mut init, &format!("enc.{i}.res.{j}"), ch, w);
                    ch = w;
                }
            }
            init_res_block(&mut init, "mid", ch, ch);
            for (i, &w) in s.widths.iter().enumerate().rev() {
                for j in 0..s.res_blocks {
                    let cin = if j == 0 { ch + w } else { ch };
                    init_res_block(&mut init, &format!("dec.{i}.res.{j}"), cin, w);
                    ch = w;
                }
            }
            init.zeros("conv_out.w", &[3, ch, s.channels]);
            init.zeros("conv_out.b", &[s.channels]);
        }
        PriorConfig::ResMlp { hidden, blocks } => {
            for b in 0..*blocks {
                init.linear(&format!("block.{b}.in"), d, *hidden);
                init.zeros(format!("block.{b}.out.w"), &[*hidden, d]);
                init.zeros(format!("block.{b}.out.b"), &[d]);
            }
        }
    }
    init.finish()
}

fn conv(g: &mut Graph<'_>, p: &Bound<'_>, prefix: &str, x: Var) -> Var {
    let y = g.conv1d(x, p.var(&format!("{prefix}.w")));
    g.add_row(y, p.var(&format!("{prefix}.b")))
}

fn res_block(g: &mut Graph<'_>, p: &Bound<'_>, prefix: &str, x: Var, cin: usize, cout: usize) -> Var {
    let h = g.relu(x);
    let h = conv(g, p, &format!("{prefix}.conv1"), h);
    let h = g.relu(h);
    let h = conv(g, p, &format!("{prefix}.conv2"), h);
    let skip = if cin != cout { g.matmul(x, p.var(&format!("{prefix}.skip"))) } else { x };
    g.add(skip, h)
}

/// Average-pools pairs along the length axis: `[l, c] -> [l/2, c]`.
fn downsample(g: &mut Graph<'_>, x: Var) -> Var {
    let l = g.value(x).rows();
    let mut pool = Tensor::zeros(&[l / 2, l]);
    for i in 0..l / 2 {
        pool.data_mut()[i * l + 2 * i] = 0.5;
        pool.data_mut()[i * l + 2 * i + 1] = 0.5;
    }
    let pool = g.constant(pool);
    g.matmul(pool, x)
}

/// Nearest-neighbour upsampling: `[l, c] -> [2l, c]`.
fn upsample(g: &mut Graph<'_>, x: Var) -> Var {
    let l = g.value(x).rows();
    let mut up = Tensor::zeros(&[2 * l, l]);
    for i in 0..2 * l {
        up.data_mut()[i * l + i / 2] = 1.0;
    }
    let up = g.constant(up);
    g.matmul(up, x)
}

/// `z = U(z0)` for a length-`d` input; returns a length-`d` vector.
pub(crate) fn forward(g: &mut Graph<'_>, cfg: &PriorConfig, p: &Bound<'_>, z0: Var) -> Var {
    let d = g.value(z0).len();
    match cfg {
        PriorConfig::Identity => z0,
        PriorConfig::Unet { .. } => {
            let s = unet_shape(cfg, d).expect("unet config");
            let x = g.reshape(z0, &[s.length, s.channels]);
            let mut h = conv(g, p, "conv_in", x);
            let mut ch = s.base;
            let mut skips = Vec::with_capacity(s.widths.len());
            for (i, &w) in s.widths.iter().enumerate() {
                for j in 0..s.res_blocks {
                    h = res_block(g, p, &format!("enc.{i}.res.{j}"), h, ch, w);
                    ch = w;
                }
                skips.push(h);
                if i + 1 < s.widths.len() {
                    h = downsample(g, h);
                }
            }
            h = res_block(g, p, "mid", h, ch, ch);
            for (i, &w) in s.widths.iter().enumerate().rev() {
                h = concat_cols(g, h, skips[i]);
                for j in 0..s.res_blocks {
                    let cin = if j == 0 { ch + w } else { ch };
                    h = res_block(g, p, &format!("dec.{i}.res.{j}"), h, cin, w);
                    ch = w;
                }
                if i > 0 {
                    h = upsample(g, h);
                }
            }
            let h = g.relu(h);
            let out = conv(g, p, "conv_out", h);
            let out = g.reshape(out, &[d]);
            g.add(z0, out)
        }
        PriorConfig::ResMlp { blocks, .. } => {
            let mut h = g.reshape(z0, &[1, d]);
            for b in 0..*blocks {
                let t = linear(g, p, &format!("block.{b}.in"), h);
                let t = g.relu(t);
                let t = linear(g, p, &format!("block.{b}.out"), t);
                h = g.add(h, t);
            }
            g.reshape(h, &[d])
        }
    }
}
