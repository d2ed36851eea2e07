//! Plain chain-rule backward passes. These are the oracles the pruned pass
//! is tested against, and the only passes available for Sigmoid and LeNet-5.

use super::{patch_nonzeros, GradBundle, Stage, ZeroCounts};
use crate::error::{Error, Result};
use crate::models::tree3::KERNEL;
use crate::models::{LeNet5Config, LeNet5Params, LeNet5Trace, ForwardTrace, Tree3Config, Tree3Params, TreeLayout};
use crate::tensor::{
    conv2d_full_backward, conv2d_grouped_backward_filters, dense_backward, maxpool2x2_backward, softmax_xent, Activation,
    Real, Tensor,
};

pub(crate) fn check_trace<T: Real>(params: &Tree3Params<T>, config: &Tree3Config, trace: &ForwardTrace<T>) -> Result<()> {
    params.check(config)?;
    let g = config.geometry;
    let conv = [config.channels() * config.k, g.conv_side(), g.conv_side()];
    let units = [config.m, config.channels(), g.bands()];
    let ok = trace.input.shape() == config.input_shape()
        && trace.conv_pre.shape() == conv
        && trace.heads.len() == config.heads()
        && trace.heads.iter().all(|h| h.tree_pre.shape() == units && h.tree_out.shape() == units);
    if !ok {
        return Err(Error::ConfigMismatch("forward trace does not match the parameters".into()));
    }
    Ok(())
}

/// Output-layer sensitivity of head `h`.
pub(crate) fn head_dlogits<T: Real>(config: &Tree3Config, dlogits: &Tensor<T>, h: usize) -> Tensor<T> {
    match config.layout {
        TreeLayout::Joint => dlogits.clone(),
        TreeLayout::PerClass => Tensor::filled(vec![1], dlogits.data()[h]),
    }
}

/// Counts output-layer gradient entries `x[u]·d[o]` with both factors nonzero.
pub(crate) fn dense_nonzeros<T: Real>(x: &[T], d: &[T]) -> u64 {
    let nx = x.iter().filter(|v| !v.is_zero()).count() as u64;
    let nd = d.iter().filter(|v| !v.is_zero()).count() as u64;
    nx * nd
}

/// Exact gradients of the softmax cross-entropy loss for Tree-3.
///
/// Zero counts are taken per gradient instance: a conv instance is one
/// (head, branch, filter, position, tap) product, nonzero when every factor
/// along its route is nonzero.
pub fn backward_reference<T: Real>(
    params: &Tree3Params<T>,
    config: &Tree3Config,
    trace: &ForwardTrace<T>,
    label: usize,
) -> Result<GradBundle<T>> {
    check_trace(params, config, trace)?;
    let (_, dlogits) = softmax_xent(&trace.logits, label)?;
    let act = config.activation;
    let g = config.geometry;
    let (m, c, k) = (config.m, config.channels(), config.k);
    let (bands, band, p) = (g.bands(), g.band_len(), g.pool_side());
    let map = p * p;
    let (side, hc) = (g.input_side(), g.conv_side());
    let pool = trace.pool.output.data();
    let input = trace.input.data();
    let conv_pre = trace.conv_pre.data();

    let mut counts = ZeroCounts::default();
    let mut d_pool = Tensor::zeros(trace.pool.output.shape().to_vec());
    let mut grads = vec![Tensor::zeros(config.conv_shape().to_vec())];
    let mut stages = vec![Stage::Conv];
    let mut conv_nonzeros = 0u64;

    for (h, (head, ht)) in params.heads.iter().zip(&trace.heads).enumerate() {
        let d_out = head_dlogits(config, &dlogits, h);
        let (d_tree_out, g_fc, _) = dense_backward(&ht.tree_out, &head.w_fc, &d_out)?;
        counts.record(Stage::Fc, g_fc.len() as u64, dense_nonzeros(ht.tree_out.data(), d_out.data()));

        let delta: Vec<T> = d_tree_out
            .data()
            .iter()
            .zip(ht.tree_pre.data())
            .map(|(&d, &z)| d * act.derivative(z))
            .collect();
        let w_tree = head.w_tree.data();
        let mut g_tree = Tensor::zeros(config.tree_shape().to_vec());
        let gt = g_tree.data_mut();
        let dp = d_pool.data_mut();
        let mut tree_nonzeros = 0u64;
        for b in 0..m {
            for ci in 0..c {
                for r in 0..bands {
                    let dl = delta[(b * c + ci) * bands + r];
                    for ki in 0..k {
                        let ch = ci * k + ki;
                        let ow = ((b * c + ci) * k + ki) * map + r * band;
                        let op = ch * map + r * band;
                        for e in 0..band {
                            gt[ow + e] = dl * pool[op + e];
                            dp[op + e] += w_tree[ow + e] * dl;
                            if !dl.is_zero() && !pool[op + e].is_zero() {
                                tree_nonzeros += 1;
                            }
                            if dl.is_zero() || w_tree[ow + e].is_zero() {
                                continue;
                            }
                            let cell = r * band + e;
                            let (wi, wj) = trace.pool.winner(ch, cell / p, cell % p);
                            if act.derivative(conv_pre[(ch * hc + wi) * hc + wj]).is_zero() {
                                continue;
                            }
                            let plane = &input[ci * side * side..(ci + 1) * side * side];
                            conv_nonzeros += patch_nonzeros(plane, side, wi, wj, KERNEL, KERNEL);
                        }
                    }
                }
            }
        }
        counts.record(Stage::Tree, g_tree.len() as u64, tree_nonzeros);
        grads.push(g_tree);
        grads.push(g_fc);
        stages.extend([Stage::Tree, Stage::Fc]);
    }

    let conv_total = (config.heads() * m * c * k * hc * hc * KERNEL * KERNEL) as u64;
    counts.record(Stage::Conv, conv_total, conv_nonzeros);

    let d_act = maxpool2x2_backward(&trace.pool, &d_pool)?;
    let d_pre = Tensor::new(
        d_act.shape().to_vec(),
        d_act.data().iter().zip(conv_pre).map(|(&d, &z)| d * act.derivative(z)).collect(),
    )?;
    grads[0] = conv2d_grouped_backward_filters(&trace.input, &d_pre, k, KERNEL, KERNEL)?;
    Ok(GradBundle {
        grads,
        stages,
        zero_counts: counts,
    })
}

fn gate<T: Real>(act: Activation, d: &Tensor<T>, pre: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::new(
        d.shape().to_vec(),
        d.data().iter().zip(pre.data()).map(|(&x, &z)| x * act.derivative(z)).collect(),
    )
}

/// Nonzero `(filter, position, tap)` instances of a full conv filter gradient.
fn conv_instances<T: Real>(input: &Tensor<T>, d_pre: &Tensor<T>, kh: usize, kw: usize) -> (u64, u64) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (nf, oh, ow) = (d_pre.shape()[0], d_pre.shape()[1], d_pre.shape()[2]);
    let mut nonzeros = 0;
    for f in 0..nf {
        for i in 0..oh {
            for j in 0..ow {
                if d_pre.data()[(f * oh + i) * ow + j].is_zero() {
                    continue;
                }
                for ci in 0..c {
                    nonzeros += patch_nonzeros(&input.data()[ci * h * w..(ci + 1) * h * w], w, i, j, kh, kw);
                }
            }
        }
    }
    ((nf * oh * ow * c * kh * kw) as u64, nonzeros)
}

/// Exact gradients for LeNet-5.
///
/// Counts: first conv layer instances as `conv`, second conv layer
/// instances as `tree`, fully connected weight entries as `fc`.
pub fn backward_reference_lenet5<T: Real>(
    params: &LeNet5Params<T>,
    config: &LeNet5Config,
    trace: &LeNet5Trace<T>,
    label: usize,
) -> Result<GradBundle<T>> {
    params.check(config)?;
    if trace.flat.len() != config.flat_len() || trace.f1_out.len() != config.f1 || trace.f2_out.len() != config.f2 {
        return Err(Error::ConfigMismatch("forward trace does not match the parameters".into()));
    }
    let act = config.activation;
    let mut counts = ZeroCounts::default();
    let (_, d3) = softmax_xent(&trace.logits, label)?;

    let (d_f2_out, g_fc3, gb3) = dense_backward(&trace.f2_out, &params.fc3.w, &d3)?;
    let d2 = gate(act, &d_f2_out, &trace.f2_pre)?;
    let (d_f1_out, g_fc2, gb2) = dense_backward(&trace.f1_out, &params.fc2.w, &d2)?;
    let d1 = gate(act, &d_f1_out, &trace.f1_pre)?;
    let (d_flat, g_fc1, gb1) = dense_backward(&trace.flat, &params.fc1.w, &d1)?;
    let fc_nonzeros = dense_nonzeros(trace.f2_out.data(), d3.data())
        + dense_nonzeros(trace.f1_out.data(), d2.data())
        + dense_nonzeros(trace.flat.data(), d1.data());
    counts.record(Stage::Fc, (g_fc1.len() + g_fc2.len() + g_fc3.len()) as u64, fc_nonzeros);

    let d_pool2 = d_flat.reshape(trace.pool2.output.shape().to_vec())?;
    let d_c2 = gate(act, &maxpool2x2_backward(&trace.pool2, &d_pool2)?, &trace.c2_pre)?;
    let (d_pool1, g_conv2, gbc2) = conv2d_full_backward(&trace.pool1.output, &params.conv2.w, &d_c2)?;
    let (total, nz) = conv_instances(&trace.pool1.output, &d_c2, 5, 5);
    counts.record(Stage::Tree, total, nz);

    let d_c1 = gate(act, &maxpool2x2_backward(&trace.pool1, &d_pool1)?, &trace.c1_pre)?;
    let (_, g_conv1, gbc1) = conv2d_full_backward(&trace.input, &params.conv1.w, &d_c1)?;
    let (total, nz) = conv_instances(&trace.input, &d_c1, 5, 5);
    counts.record(Stage::Conv, total, nz);

    let mut grads = Vec::new();
    let mut stages = Vec::new();
    for (stage, w, b) in [
        (Stage::Conv, g_conv1, gbc1),
        (Stage::Tree, g_conv2, gbc2),
        (Stage::Fc, g_fc1, gb1),
        (Stage::Fc, g_fc2, gb2),
        (Stage::Fc, g_fc3, gb3),
    ] {
        grads.push(w);
        stages.push(stage);
        if config.bias {
            grads.push(b);
            stages.push(stage);
        }
    }
    Ok(GradBundle {
        grads,
        stages,
        zero_counts: counts,
    })
}
