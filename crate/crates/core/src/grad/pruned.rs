//! Single-route backward pass for ReLU Tree-3.
//!
//! With ReLU every factor on a route is either passed through or zero, so the
//! conv-filter gradient is `Σ input · w_tree · Σ_o w_fc·(p − y)` over routes
//! whose conv unit is positive, wins its pool window, and feeds a positive
//! tree unit. The pass walks active tree units first and touches only the
//! pool winners beneath them.

use super::reference::{check_trace, dense_nonzeros, head_dlogits};
use super::{GradBundle, NonzeroTable, Stage, ZeroCounts};
use crate::error::{Error, Result};
use crate::models::tree3::KERNEL;
use crate::models::{ForwardTrace, Tree3Config, Tree3Params};
use crate::tensor::{row_dot, softmax_xent, Activation, Real, Tensor};

fn require_relu(config: &Tree3Config) -> Result<()> {
    if config.activation != Activation::Relu {
        return Err(Error::Unsupported(format!(
            "the pruned backward pass needs ReLU, this model uses {}",
            config.activation.name()
        )));
    }
    Ok(())
}

/// Visits the active tree units of every head as `(head, b, c, r, e)` where
/// `e` is the unit's output sensitivity, in (head, branch, channel, band) order.
fn active_units<T: Real>(
    params: &Tree3Params<T>,
    config: &Tree3Config,
    trace: &ForwardTrace<T>,
    dlogits: &Tensor<T>,
    mut f: impl FnMut(usize, usize, usize, usize, T),
) {
    let (m, c, bands) = (config.m, config.channels(), config.geometry.bands());
    let out = config.head_outputs();
    for (h, (head, ht)) in params.heads.iter().zip(&trace.heads).enumerate() {
        let d_out = head_dlogits(config, dlogits, h);
        let fc = head.w_fc.data();
        let pre = ht.tree_pre.data();
        for b in 0..m {
            for ci in 0..c {
                for r in 0..bands {
                    let u = (b * c + ci) * bands + r;
                    if pre[u] <= T::zero() {
                        continue;
                    }
                    let e = row_dot(&fc[u * out..(u + 1) * out], d_out.data());
                    if !e.is_zero() {
                        f(h, b, ci, r, e);
                    }
                }
            }
        }
    }
}

/// Output-layer gradients `tree_out[u]·d[o]` of every head, plus their count.
fn fc_grads<T: Real>(config: &Tree3Config, trace: &ForwardTrace<T>, dlogits: &Tensor<T>, theta: Option<f64>) -> (Vec<Tensor<T>>, u64, u64) {
    let out = config.head_outputs();
    let mut nonzeros = 0;
    let mut total = 0;
    let grads = trace
        .heads
        .iter()
        .enumerate()
        .map(|(h, ht)| {
            let d = head_dlogits(config, dlogits, h);
            let mut g = Tensor::zeros(config.fc_shape().to_vec());
            total += g.len() as u64;
            let gd = g.data_mut();
            for (u, &t) in ht.tree_out.data().iter().enumerate() {
                if t.is_zero() {
                    continue;
                }
                for (o, &dv) in d.data().iter().enumerate() {
                    let v = t * dv;
                    match theta {
                        Some(th) if v.f64().abs() < th => {}
                        _ => gd[u * out + o] = v,
                    }
                }
            }
            nonzeros += match theta {
                None => dense_nonzeros(ht.tree_out.data(), d.data()),
                Some(_) => gd.iter().filter(|v| !v.is_zero()).count() as u64,
            };
            g
        })
        .collect();
    (grads, total, nonzeros)
}

fn assemble<T: Real>(g_conv: Tensor<T>, g_tree: Vec<Tensor<T>>, g_fc: Vec<Tensor<T>>, counts: ZeroCounts) -> GradBundle<T> {
    let mut grads = vec![g_conv];
    let mut stages = vec![Stage::Conv];
    for (t, f) in g_tree.into_iter().zip(g_fc) {
        grads.push(t);
        grads.push(f);
        stages.extend([Stage::Tree, Stage::Fc]);
    }
    GradBundle {
        grads,
        stages,
        zero_counts: counts,
    }
}

fn conv_total(config: &Tree3Config) -> u64 {
    let hc = config.geometry.conv_side();
    (config.heads() * config.m * config.channels() * config.k * hc * hc * KERNEL * KERNEL) as u64
}

/// Pruned backward pass. Produces the same values as
/// [`backward_reference`](super::backward_reference) under `==`: every sum
/// visits its nonzero terms in the same order.
pub fn backward_pruned_tree3<T: Real>(
    params: &Tree3Params<T>,
    config: &Tree3Config,
    trace: &ForwardTrace<T>,
    label: usize,
) -> Result<GradBundle<T>> {
    require_relu(config)?;
    check_trace(params, config, trace)?;
    let (_, dlogits) = softmax_xent(&trace.logits, label)?;
    let g = config.geometry;
    let (c, k) = (config.channels(), config.k);
    let (band, p, side) = (g.band_len(), g.pool_side(), g.input_side());
    let map = p * p;
    let pool = trace.pool.output.data();
    let input = trace.input.data();
    let tables: Vec<NonzeroTable> = (0..c)
        .map(|ci| NonzeroTable::new(&input[ci * side * side..(ci + 1) * side * side], side, side))
        .collect();

    let mut counts = ZeroCounts::default();
    let (g_fc, fc_total, fc_nonzeros) = fc_grads(config, trace, &dlogits, None);
    counts.record(Stage::Fc, fc_total, fc_nonzeros);

    let mut g_tree: Vec<Tensor<T>> = (0..config.heads())
        .map(|_| Tensor::zeros(config.tree_shape().to_vec()))
        .collect();
    // Sensitivity of each pooled cell, summed over the units above it.
    let mut s = vec![T::zero(); c * k * map];
    let mut tree_nonzeros = 0u64;
    let mut conv_nonzeros = 0u64;
    active_units(params, config, trace, &dlogits, |h, b, ci, r, e| {
        let w_tree = params.heads[h].w_tree.data();
        let gt = g_tree[h].data_mut();
        for ki in 0..k {
            let ch = ci * k + ki;
            let ow = ((b * c + ci) * k + ki) * map + r * band;
            let op = ch * map + r * band;
            for idx in 0..band {
                let pv = pool[op + idx];
                if pv <= T::zero() {
                    continue;
                }
                let w = w_tree[ow + idx];
                gt[ow + idx] = e * pv;
                s[op + idx] += w * e;
                tree_nonzeros += 1;
                if !w.is_zero() {
                    let cell = r * band + idx;
                    let (wi, wj) = trace.pool.winner(ch, cell / p, cell % p);
                    conv_nonzeros += tables[ci].window(wi, wj, KERNEL, KERNEL);
                }
            }
        }
    });
    counts.record(Stage::Tree, (config.heads() * config.tree_shape().iter().product::<usize>()) as u64, tree_nonzeros);
    counts.record(Stage::Conv, conv_total(config), conv_nonzeros);

    // Conv filter gradient: winners visited in raster order of the conv map.
    let mut g_conv = Tensor::zeros(config.conv_shape().to_vec());
    let mut acc = [0f64; KERNEL * KERNEL];
    for ci in 0..c {
        let plane = &input[ci * side * side..(ci + 1) * side * side];
        for ki in 0..k {
            let ch = ci * k + ki;
            acc.fill(0.0);
            for pi in 0..p {
                for di in 0..2 {
                    for pj in 0..p {
                        let sv = s[ch * map + pi * p + pj];
                        if sv.is_zero() {
                            continue;
                        }
                        let (wi, wj) = trace.pool.winner(ch, pi, pj);
                        if wi != 2 * pi + di {
                            continue;
                        }
                        let sv = sv.f64();
                        for u in 0..KERNEL {
                            let row = &plane[(wi + u) * side + wj..][..KERNEL];
                            for (v, &x) in row.iter().enumerate() {
                                acc[u * KERNEL + v] += x.f64() * sv;
                            }
                        }
                    }
                }
            }
            for (dst, &a) in g_conv.data_mut()[ch * KERNEL * KERNEL..][..KERNEL * KERNEL].iter_mut().zip(&acc) {
                *dst = T::of(a);
            }
        }
    }
    Ok(assemble(g_conv, g_tree, g_fc, counts))
}

/// Pruned backward pass that drops every gradient instance with magnitude
/// below `theta`: single conv routes `input·w_tree·e`, tree entries and
/// output-layer entries alike. Zero counts reflect the survivors.
pub fn backward_pruned_thresholded<T: Real>(
    params: &Tree3Params<T>,
    config: &Tree3Config,
    trace: &ForwardTrace<T>,
    label: usize,
    theta: f64,
) -> Result<GradBundle<T>> {
    require_relu(config)?;
    check_trace(params, config, trace)?;
    if theta.is_nan() || theta < 0.0 {
        return Err(Error::Invalid(format!("threshold must be nonnegative, got {theta}")));
    }
    let (_, dlogits) = softmax_xent(&trace.logits, label)?;
    let g = config.geometry;
    let (c, k) = (config.channels(), config.k);
    let (band, p, side) = (g.band_len(), g.pool_side(), g.input_side());
    let map = p * p;
    let pool = trace.pool.output.data();
    let input = trace.input.data();

    let mut counts = ZeroCounts::default();
    let (g_fc, fc_total, fc_nonzeros) = fc_grads(config, trace, &dlogits, Some(theta));
    counts.record(Stage::Fc, fc_total, fc_nonzeros);

    let mut g_tree: Vec<Tensor<T>> = (0..config.heads())
        .map(|_| Tensor::zeros(config.tree_shape().to_vec()))
        .collect();
    let mut acc = vec![0f64; c * k * KERNEL * KERNEL];
    let mut tree_nonzeros = 0u64;
    let mut conv_nonzeros = 0u64;
    active_units(params, config, trace, &dlogits, |h, b, ci, r, e| {
        let w_tree = params.heads[h].w_tree.data();
        let gt = g_tree[h].data_mut();
        let plane = &input[ci * side * side..(ci + 1) * side * side];
        for ki in 0..k {
            let ch = ci * k + ki;
            let ow = ((b * c + ci) * k + ki) * map + r * band;
            let op = ch * map + r * band;
            let a = &mut acc[ch * KERNEL * KERNEL..][..KERNEL * KERNEL];
            for idx in 0..band {
                let pv = pool[op + idx];
                if pv <= T::zero() {
                    continue;
                }
                let gv = e * pv;
                if gv.f64().abs() >= theta && !gv.is_zero() {
                    gt[ow + idx] = gv;
                    tree_nonzeros += 1;
                }
                let coeff = (w_tree[ow + idx] * e).f64();
                if coeff == 0.0 {
                    continue;
                }
                let cell = r * band + idx;
                let (wi, wj) = trace.pool.winner(ch, cell / p, cell % p);
                for u in 0..KERNEL {
                    let row = &plane[(wi + u) * side + wj..][..KERNEL];
                    for (v, &x) in row.iter().enumerate() {
                        let route = x.f64() * coeff;
                        if route != 0.0 && route.abs() >= theta {
                            a[u * KERNEL + v] += route;
                            conv_nonzeros += 1;
                        }
                    }
                }
            }
        }
    });
    counts.record(Stage::Tree, (config.heads() * config.tree_shape().iter().product::<usize>()) as u64, tree_nonzeros);
    counts.record(Stage::Conv, conv_total(config), conv_nonzeros);
    let g_conv = Tensor::new(config.conv_shape().to_vec(), acc.into_iter().map(T::of).collect())?;
    Ok(assemble(g_conv, g_tree, g_fc, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::backward_reference;
    use crate::grad::testutil::instance;
    use crate::models::{count_gradient_instances, tree3_forward, Arch, Geometry, TreeLayout};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn config(k: usize, m: usize, mnist: bool, per_class: bool) -> Tree3Config {
        let mut cfg = if mnist {
            Tree3Config::mnist(k, m, Activation::Relu)
        } else {
            Tree3Config::cifar(k, m, Activation::Relu)
        };
        if per_class {
            cfg.layout = TreeLayout::PerClass;
        }
        cfg
    }

    fn both<T: Real>(cfg: &Tree3Config, seed: u64) -> (GradBundle<T>, GradBundle<T>) {
        let (p, img, label) = instance::<T>(cfg, seed);
        let trace = tree3_forward(&p, cfg, &img).unwrap();
        (
            backward_reference(&p, cfg, &trace, label).unwrap(),
            backward_pruned_tree3(&p, cfg, &trace, label).unwrap(),
        )
    }

    #[test]
    fn full_sized_instance_matches_reference() {
        let cfg = config(6, 16, false, false);
        let (r, p) = both::<f64>(&cfg, 11);
        assert!(r.values_equal(&p));
        assert_eq!(r.zero_counts, p.zero_counts);
        assert_eq!(p.zero_counts.conv.total, count_gradient_instances(Arch::Tree3, 6, 16).pre_pool);
        let f = p.zero_counts.fractions();
        assert!(f.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(p.g_conv().data().iter().any(|x| *x != 0.0));
    }

    #[test]
    fn dead_conv_layer_gives_zero_conv_gradient() {
        let cfg = config(2, 2, false, false);
        let (mut p, img, label) = instance::<f64>(&cfg, 3);
        p.w_conv = Tensor::filled(cfg.conv_shape().to_vec(), -0.1);
        let img = img.map(|x| x.abs() + 0.01);
        let trace = tree3_forward(&p, &cfg, &img).unwrap();
        let g = backward_pruned_tree3(&p, &cfg, &trace, label).unwrap();
        assert!(g.g_conv().data().iter().all(|x| *x == 0.0));
        assert_eq!(g.zero_counts.conv.fraction(), 1.0);
    }

    #[test]
    fn sigmoid_is_rejected() {
        let cfg = Tree3Config::cifar(1, 1, Activation::Sigmoid);
        let (p, img, label) = instance::<f32>(&cfg, 1);
        let trace = tree3_forward(&p, &cfg, &img).unwrap();
        let err = backward_pruned_tree3(&p, &cfg, &trace, label).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn thresholded_pass_limits() {
        let cfg = config(3, 2, false, false);
        let (p, img, label) = instance::<f64>(&cfg, 5);
        let trace = tree3_forward(&p, &cfg, &img).unwrap();
        let exact = backward_pruned_tree3(&p, &cfg, &trace, label).unwrap();
        let zero = backward_pruned_thresholded(&p, &cfg, &trace, label, 0.0).unwrap();
        assert!(exact.max_rel_diff(&zero, 1e-12).0 < 1e-12);
        assert_eq!(exact.zero_counts, zero.zero_counts);
        let inf = backward_pruned_thresholded(&p, &cfg, &trace, label, f64::INFINITY).unwrap();
        assert_eq!(inf.nonzeros(), 0);
        assert_eq!(inf.zero_counts.fractions(), [1.0; 3]);
    }

    #[test]
    fn mnist_geometry_counts() {
        let cfg = Tree3Config {
            geometry: Geometry::Mnist,
            ..config(2, 3, true, false)
        };
        let (r, p) = both::<f32>(&cfg, 8);
        assert!(r.values_equal(&p));
        assert_eq!(p.zero_counts.conv.total, (25 * 2 * 24 * 24 * 3) as u64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pruned_equals_reference_f64(k in 1usize..5, m in 1usize..5, mnist in any::<bool>(), per_class in any::<bool>(), seed in 0u64..10_000) {
            let (r, p) = both::<f64>(&config(k, m, mnist, per_class), seed);
            prop_assert!(r.values_equal(&p));
            prop_assert_eq!(r.zero_counts, p.zero_counts);
        }

        #[test]
        fn pruned_equals_reference_f32(k in 1usize..5, m in 1usize..5, mnist in any::<bool>(), seed in 0u64..10_000) {
            let (r, p) = both::<f32>(&config(k, m, mnist, false), seed);
            prop_assert!(r.max_rel_diff(&p, 1e-30).0 <= 1e-5);
            prop_assert_eq!(r.zero_counts, p.zero_counts);
        }
    }
}
