//! Central-difference gradient checks.

use super::{example_gradients, Engine, GradBundle};
use crate::error::Result;
use crate::models::{lenet5_forward, tree3_forward, Model};
use crate::tensor::{softmax_xent, Activation, Tensor};

/// Outcome of a finite-difference sweep over every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// `(tensor, index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU kink or changed a
    /// pool winner; the loss is not differentiable across those.
    pub skipped: usize,
}

/// Discrete state of a forward pass: ReLU gates and pool winners.
fn signature(model: &Model<f64>, img: &Tensor<f64>) -> Result<(Vec<bool>, Vec<u8>)> {
    let gates = |ts: &[&Tensor<f64>], act: Activation| -> Vec<bool> {
        if act != Activation::Relu {
            return Vec::new();
        }
        ts.iter().flat_map(|t| t.data().iter().map(|&x| x > 0.0)).collect()
    };
    Ok(match model {
        Model::Tree3 { config, params } => {
            let t = tree3_forward(params, config, img)?;
            let mut ts = vec![&t.conv_pre];
            ts.extend(t.heads.iter().map(|h| &h.tree_pre));
            (gates(&ts, config.activation), t.pool.argmax)
        }
        Model::LeNet5 { config, params } => {
            let t = lenet5_forward(params, config, img)?;
            let g = gates(&[&t.c1_pre, &t.c2_pre, &t.f1_pre, &t.f2_pre], config.activation);
            let mut a = t.pool1.argmax;
            a.extend(t.pool2.argmax);
            (g, a)
        }
    })
}

fn loss(model: &Model<f64>, img: &Tensor<f64>, label: usize) -> Result<f64> {
    Ok(softmax_xent(&model.logits(img)?, label)?.0)
}

/// Compares `analytic` against central differences with step `eps`.
///
/// The relative error of a coordinate is `|a − n| / max(|a|, |n|, floor)`.
pub fn finite_difference_check(
    model: &Model<f64>,
    img: &Tensor<f64>,
    label: usize,
    analytic: &GradBundle<f64>,
    eps: f64,
    floor: f64,
) -> Result<FdReport> {
    let base = signature(model, img)?;
    let mut probe = model.clone();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let n_tensors = model.tensors().len();
    for ti in 0..n_tensors {
        for i in 0..model.tensors()[ti].len() {
            let w0 = model.tensors()[ti].data()[i];
            probe.tensors_mut()[ti].data_mut()[i] = w0 + eps;
            let plus = loss(&probe, img, label)?;
            let kink_plus = signature(&probe, img)? != base;
            probe.tensors_mut()[ti].data_mut()[i] = w0 - eps;
            let minus = loss(&probe, img, label)?;
            let kink_minus = signature(&probe, img)? != base;
            probe.tensors_mut()[ti].data_mut()[i] = w0;
            if kink_plus || kink_minus {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.grads[ti].data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = err;
                report.worst = Some((ti, i, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Runs the reference backward pass and checks it against central differences.
pub fn check_reference(model: &Model<f64>, img: &Tensor<f64>, label: usize, eps: f64, floor: f64) -> Result<FdReport> {
    let g = example_gradients(model, img, label, Engine::Reference)?;
    finite_difference_check(model, img, label, &g.bundle, eps, floor)
}

/// Step used by the gradient checks.
pub const FD_EPS: f64 = 1e-5;
/// Smallest denominator of the relative error. With `FD_EPS` the
/// differences carry about 1e-10 of rounding noise, so gradients below this
/// are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-4;
