//! Enumeration of individual conv-filter gradient routes.

use super::reference::{check_trace, head_dlogits};
use crate::error::Result;
use crate::models::tree3::KERNEL;
use crate::models::{ForwardTrace, Tree3Config, Tree3Params};
use crate::tensor::{row_dot, softmax_xent, Real};

/// One nonzero contribution to a shared conv filter weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvRoute {
    pub head: usize,
    pub branch: usize,
    pub channel: usize,
    pub filter: usize,
    /// Conv-map position of the pool winner the route passes through.
    pub row: usize,
    pub col: usize,
    pub tap: (usize, usize),
    /// The conv weight `w_conv[channel, filter, tap]` the route updates.
    pub weight: f64,
    /// `input · σ′_conv · w_tree · σ′_tree · Σ_o w_fc·(p − y)`.
    pub value: f64,
}

/// Calls `f` for every route with a nonzero contribution, for either
/// activation. Summing `value` per `(channel, filter, tap)` gives the conv
/// filter gradient.
pub fn for_each_conv_route<T: Real>(
    params: &Tree3Params<T>,
    config: &Tree3Config,
    trace: &ForwardTrace<T>,
    label: usize,
    mut f: impl FnMut(&ConvRoute),
) -> Result<()> {
    check_trace(params, config, trace)?;
    let (_, dlogits) = softmax_xent(&trace.logits, label)?;
    let act = config.activation;
    let g = config.geometry;
    let (m, c, k) = (config.m, config.channels(), config.k);
    let (bands, band, p, side, hc) = (g.bands(), g.band_len(), g.pool_side(), g.input_side(), g.conv_side());
    let map = p * p;
    let out = config.head_outputs();
    let input = trace.input.data();
    let conv_pre = trace.conv_pre.data();
    let w_conv = params.w_conv.data();
    for (h, (head, ht)) in params.heads.iter().zip(&trace.heads).enumerate() {
        let d_out = head_dlogits(config, &dlogits, h);
        let fc = head.w_fc.data();
        let w_tree = head.w_tree.data();
        for b in 0..m {
            for ci in 0..c {
                for r in 0..bands {
                    let u = (b * c + ci) * bands + r;
                    let e = row_dot(&fc[u * out..(u + 1) * out], d_out.data());
                    let delta = e.f64() * act.derivative(ht.tree_pre.data()[u]).f64();
                    if delta == 0.0 {
                        continue;
                    }
                    for ki in 0..k {
                        let ch = ci * k + ki;
                        let ow = ((b * c + ci) * k + ki) * map + r * band;
                        for idx in 0..band {
                            let cell = r * band + idx;
                            let (wi, wj) = trace.pool.winner(ch, cell / p, cell % p);
                            let gate = act.derivative(conv_pre[(ch * hc + wi) * hc + wj]).f64();
                            let coeff = gate * w_tree[ow + idx].f64() * delta;
                            if coeff == 0.0 {
                                continue;
                            }
                            for tu in 0..KERNEL {
                                for tv in 0..KERNEL {
                                    let x = input[(ci * side + wi + tu) * side + wj + tv].f64();
                                    if x == 0.0 {
                                        continue;
                                    }
                                    f(&ConvRoute {
                                        head: h,
                                        branch: b,
                                        channel: ci,
                                        filter: ki,
                                        row: wi,
                                        col: wj,
                                        tap: (tu, tv),
                                        weight: w_conv[(ch * KERNEL + tu) * KERNEL + tv].f64(),
                                        value: x * coeff,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
