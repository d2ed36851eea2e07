//! Magnitude thresholding of gradients.

use super::GradBundle;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Zeroes every entry with `|Δ| < θ`; returns the result and the share of
/// entries that are still nonzero.
pub fn threshold_gradients<T: Real>(bundle: &GradBundle<T>, theta: f64) -> Result<(GradBundle<T>, f64)> {
    if theta.is_nan() || theta < 0.0 {
        return Err(Error::Invalid(format!("threshold must be nonnegative, got {theta}")));
    }
    let mut out = bundle.clone();
    for g in &mut out.grads {
        for x in g.data_mut() {
            if x.f64().abs() < theta {
                *x = T::zero();
            }
        }
    }
    let total = out.len();
    let active = if total == 0 { 0.0 } else { out.nonzeros() as f64 / total as f64 };
    Ok((out, active))
}

/// Threshold that keeps `target · total` of the instances whose magnitudes
/// are listed in `magnitudes` (zeros may be omitted; `total` counts them).
///
/// Returns the `⌈target·total⌉`-th largest magnitude, or 0 when no more than
/// that many instances are nonzero anyway. `magnitudes` is reordered.
pub fn threshold_for_fraction(magnitudes: &mut [f64], total: usize, target: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Invalid("cannot choose a threshold from an empty gradient sample".into()));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Invalid(format!("target active fraction must lie in (0, 1], got {target}")));
    }
    let keep = ((target * total as f64).ceil() as usize).max(1);
    let mut n = 0;
    for i in 0..magnitudes.len() {
        let v = magnitudes[i].abs();
        if v != 0.0 {
            magnitudes[n] = v;
            n += 1;
        }
    }
    if n <= keep {
        return Ok(0.0);
    }
    let nz = &mut magnitudes[..n];
    let (_, kth, _) = nz.select_nth_unstable_by(keep - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}

/// Threshold under which dropping entries leaves about `target` of all
/// gradient entries in `bundles` active.
pub fn find_threshold_for_fraction<T: Real>(bundles: &[GradBundle<T>], target: f64) -> Result<f64> {
    let total: usize = bundles.iter().map(GradBundle::len).sum();
    let mut mags: Vec<f64> = bundles
        .iter()
        .flat_map(|b| b.grads.iter().flat_map(|g| g.data().iter().map(|x| x.f64())))
        .collect();
    threshold_for_fraction(&mut mags, total, target)
}
