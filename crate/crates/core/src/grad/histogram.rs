//! Gradient magnitude histograms.

use serde::{Deserialize, Serialize};

use super::GradBundle;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistScale {
    #[default]
    Log,
    Linear,
}

/// What is binned: `|Δ|`, or `|Δ/W|` against the weight the gradient updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistMode {
    #[default]
    Abs,
    Relative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradHistogram {
    pub scale: HistScale,
    /// `bins + 1` increasing bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl GradHistogram {
    pub const BINS: usize = 1000;

    /// Bins the nonzero magnitudes of `values` over their observed range.
    pub fn from_values<V: Copy + Into<f64>>(values: &[V], bins: usize, scale: HistScale) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, 0f64);
        for v in values.iter().map(|&v| v.into().abs()).filter(|v| *v > 0.0 && v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi == 0.0 || bins == 0 {
            return Err(Error::Invalid("no nonzero gradients to histogram".into()));
        }
        if hi <= lo {
            hi = lo * (1.0 + 1e-9);
        }
        let t = |x: f64| match scale {
            HistScale::Log => x.ln(),
            HistScale::Linear => x,
        };
        let (t0, t1) = (t(lo), t(hi));
        let edges: Vec<f64> = (0..=bins)
            .map(|i| {
                if i == 0 {
                    return lo;
                }
                if i == bins {
                    return hi;
                }
                let y = t0 + (t1 - t0) * i as f64 / bins as f64;
                match scale {
                    HistScale::Log => y.exp(),
                    HistScale::Linear => y,
                }
            })
            .collect();
        let mut counts = vec![0u64; bins];
        for v in values.iter().map(|&v| v.into().abs()).filter(|v| *v > 0.0 && v.is_finite()) {
            let mut i = (((t(v) - t0) / (t1 - t0)) * bins as f64) as usize;
            i = i.min(bins - 1);
            // Correct rounding at bin boundaries so edges[i] <= v < edges[i+1].
            while i > 0 && v < edges[i] {
                i -= 1;
            }
            while i + 1 < bins && v >= edges[i + 1] {
                i += 1;
            }
            counts[i] += 1;
        }
        Ok(GradHistogram { scale, edges, counts })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(bin_low, bin_high, count)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.edges[i], self.edges[i + 1], c))
    }

    /// Upper edge of the first bin at which the cumulative mass reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let want = q * self.total() as f64;
        let mut cum = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            cum += c;
            if cum as f64 >= want {
                return self.edges[i + 1];
            }
        }
        *self.edges.last().unwrap()
    }
}

/// Exact `q`-quantile of the nonzero magnitudes in `values` (reorders `values`).
pub fn magnitude_quantile(values: &mut Vec<f64>, q: f64) -> Result<f64> {
    values.retain(|v| *v != 0.0 && v.is_finite());
    values.iter_mut().for_each(|v| *v = v.abs());
    if values.is_empty() {
        return Err(Error::Invalid("no nonzero gradients observed".into()));
    }
    let idx = ((q.clamp(0.0, 1.0) * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1;
    let (_, v, _) = values.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*v)
}

/// Histogram of bundle entries. `Relative` divides each entry by the matching
/// weight in `weights` (the model's tensors in canonical order), skipping
/// entries whose weight is zero.
pub fn histogram_gradients<'a, T: Real + 'a>(
    bundles: impl IntoIterator<Item = &'a GradBundle<T>>,
    weights: Option<&[&Tensor<T>]>,
    mode: HistMode,
    scale: HistScale,
) -> Result<GradHistogram> {
    let mut values = Vec::new();
    for b in bundles {
        for (ti, g) in b.grads.iter().enumerate() {
            match mode {
                HistMode::Abs => values.extend(g.data().iter().map(|x| x.f64())),
                HistMode::Relative => {
                    let w = weights
                        .and_then(|w| w.get(ti))
                        .ok_or_else(|| Error::Invalid("relative histograms need the model weights".into()))?;
                    if !w.same_shape(g) {
                        return Err(Error::shape("histogram_gradients", "weight tensor", g.len(), w.len()));
                    }
                    values.extend(
                        g.data()
                            .iter()
                            .zip(w.data())
                            .filter(|(_, w)| !w.is_zero())
                            .map(|(d, w)| d.f64() / w.f64()),
                    );
                }
            }
        }
    }
    GradHistogram::from_values(&values, GradHistogram::BINS, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{Stage, ZeroCounts};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_value_lands_in_one_bin() {
        let h = GradHistogram::from_values(&[0.3; 17], 1000, HistScale::Log).unwrap();
        assert_eq!(h.bins(), 1000);
        assert_eq!(h.counts[0], 17);
        assert_eq!(h.total(), 17);
    }

    #[test]
    fn total_counts_nonzero_values() {
        let vals = [0.0, 1e-8, -3.0, 0.0, 2.5, 1e-3];
        let h = GradHistogram::from_values(&vals, 1000, HistScale::Log).unwrap();
        assert_eq!(h.total(), 4);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(GradHistogram::from_values(&[0.0, 0.0], 1000, HistScale::Log).is_err());
    }

    #[test]
    fn linear_bins_match_direct_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..100_000).map(|_| rng.random_range(1.0..2.0)).collect();
        let h = GradHistogram::from_values(&vals, 100, HistScale::Linear).unwrap();
        for (lo, hi, c) in h.rows() {
            let direct = vals.iter().filter(|&&v| v >= lo && (v < hi || (hi == h.edges[100] && v == hi))).count();
            assert_eq!(c as usize, direct);
            assert!((c as f64 - 1000.0).abs() < 150.0, "{c}");
        }
    }

    #[test]
    fn quantile_mass_below_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..200_000).map(|_| (-rng.random_range(0.0..12.0f64)).exp()).collect();
        let h = GradHistogram::from_values(&vals, 1000, HistScale::Log).unwrap();
        let d0 = h.quantile(0.97);
        let below = vals.iter().filter(|&&v| v < d0).count() as f64 / vals.len() as f64;
        assert!((below - 0.97).abs() < 0.005, "{below}");
        let exact = magnitude_quantile(&mut vals.clone(), 0.97).unwrap();
        let below = vals.iter().filter(|&&v| v <= exact).count() as f64 / vals.len() as f64;
        assert!((below - 0.97).abs() < 1e-4);
    }

    #[test]
    fn relative_mode_skips_zero_weights() {
        let b = GradBundle {
            grads: vec![Tensor::new(vec![3], vec![1.0, 2.0, 4.0]).unwrap()],
            stages: vec![Stage::Conv],
            zero_counts: ZeroCounts::default(),
        };
        let w = Tensor::new(vec![3], vec![2.0, 0.0, 4.0]).unwrap();
        let h = histogram_gradients([&b], Some(&[&w]), HistMode::Relative, HistScale::Log).unwrap();
        assert_eq!(h.total(), 2);
        assert_eq!(h.edges[0], 0.5);
        assert!(histogram_gradients([&b], None, HistMode::Relative, HistScale::Log).is_err());
    }
}
