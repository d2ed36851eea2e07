//! Test-set sweeps behind the `sparsity` and `gradhist` reports.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grad::{example_gradients, Engine, GradHistogram, HistScale, SparsityStats, ZeroCounts};
use crate::models::Model;
use crate::rng::{keyed, Stream};
use crate::tensor::argmax;

/// Zero-fraction statistics over a test-set sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsitySweep {
    /// Per-example statistics over every swept example.
    pub overall: SparsityStats,
    /// Mean fractions of each disjoint resample.
    pub resample_means: Vec<[f64; 3]>,
}

impl SparsitySweep {
    pub fn fraction_zero(&self) -> [f64; 3] {
        self.overall.fraction_zero()
    }

    /// Sample standard deviation of the resample means.
    pub fn resample_std(&self) -> [f64; 3] {
        let n = self.resample_means.len();
        if n < 2 {
            return [0.0; 3];
        }
        let mut out = [0.0; 3];
        for (s, o) in out.iter_mut().enumerate() {
            let mean = self.resample_means.iter().map(|m| m[s]).sum::<f64>() / n as f64;
            let ss: f64 = self.resample_means.iter().map(|m| (m[s] - mean).powi(2)).sum();
            *o = (ss / (n - 1) as f64).sqrt();
        }
        out
    }
}

fn check_kind(model: &Model<f32>, data: &Dataset) -> Result<()> {
    if data.kind() != model.spec().dataset() {
        return Err(Error::ConfigMismatch(format!(
            "model expects {:?} images, dataset holds {:?}",
            model.spec().dataset(),
            data.kind()
        )));
    }
    if data.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    Ok(())
}

/// Seeded permutation of the first `limit` examples.
fn sweep_order(n: usize, limit: Option<usize>, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut keyed(seed, Stream::Resample, &[]));
    idx.truncate(limit.unwrap_or(n).min(n));
    idx
}

/// Route-level zero fractions on up to `limit` examples, drawn in a seeded
/// order and split into `resamples` disjoint groups.
pub fn sparsity_sweep(
    model: &Model<f32>,
    data: &Dataset,
    limit: Option<usize>,
    resamples: usize,
    seed: u64,
    engine: Engine,
) -> Result<SparsitySweep> {
    check_kind(model, data)?;
    let order = sweep_order(data.len(), limit, seed);
    let resamples = resamples.clamp(1, order.len());
    let counts: Vec<Result<ZeroCounts>> = order
        .par_iter()
        .map(|&i| {
            let img = data.get(i);
            Ok(example_gradients(model, &img.pixels, img.label as usize, engine)?.bundle.zero_counts)
        })
        .collect();
    let counts = counts.into_iter().collect::<Result<Vec<_>>>()?;
    let mut overall = SparsityStats::default();
    counts.iter().for_each(|c| overall.push(c));
    let per = counts.len() / resamples;
    let resample_means = (0..resamples)
        .map(|r| {
            let mut s = SparsityStats::default();
            counts[r * per..(r + 1) * per].iter().for_each(|c| s.push(c));
            s.fraction_zero()
        })
        .collect();
    Ok(SparsitySweep { overall, resample_means })
}

/// Magnitude histograms of per-example gradient entries, split by whether the
/// model classified the example correctly.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientHistograms {
    pub abs_correct: Option<GradHistogram>,
    pub abs_wrong: Option<GradHistogram>,
    pub rel_correct: Option<GradHistogram>,
    pub rel_wrong: Option<GradHistogram>,
    pub correct: usize,
    pub wrong: usize,
}

impl GradientHistograms {
    /// `(name, histogram)` pairs for the histograms that observed any mass.
    pub fn named(&self) -> Vec<(&'static str, &GradHistogram)> {
        [
            ("abs_correct", &self.abs_correct),
            ("abs_wrong", &self.abs_wrong),
            ("rel_correct", &self.rel_correct),
            ("rel_wrong", &self.rel_wrong),
        ]
        .into_iter()
        .filter_map(|(n, h)| h.as_ref().map(|h| (n, h)))
        .collect()
    }
}

#[derive(Default)]
struct Magnitudes {
    abs: Vec<f32>,
    rel: Vec<f32>,
}

pub fn gradient_histograms(
    model: &Model<f32>,
    data: &Dataset,
    limit: Option<usize>,
    seed: u64,
    scale: HistScale,
) -> Result<GradientHistograms> {
    check_kind(model, data)?;
    let order = sweep_order(data.len(), limit, seed);
    let weights = model.tensors();
    let engine = Engine::select(true, model);
    let per: Vec<Result<(bool, Magnitudes)>> = order
        .par_iter()
        .map(|&i| {
            let img = data.get(i);
            let g = example_gradients(model, &img.pixels, img.label as usize, engine)?;
            let correct = argmax(g.logits.data()) == img.label as usize;
            let mut m = Magnitudes::default();
            for (d, w) in g.bundle.grads.iter().zip(&weights) {
                for (&d, &w) in d.data().iter().zip(w.data()) {
                    if d != 0.0 {
                        m.abs.push(d.abs());
                        if w != 0.0 {
                            m.rel.push((d / w).abs());
                        }
                    }
                }
            }
            Ok((correct, m))
        })
        .collect();
    let (mut right, mut wrong) = (Magnitudes::default(), Magnitudes::default());
    let (mut n_right, mut n_wrong) = (0, 0);
    for p in per {
        let (ok, m) = p?;
        let dst = if ok {
            n_right += 1;
            &mut right
        } else {
            n_wrong += 1;
            &mut wrong
        };
        dst.abs.extend(m.abs);
        dst.rel.extend(m.rel);
    }
    let hist = |v: &[f32]| {
        if v.is_empty() {
            Ok(None)
        } else {
            GradHistogram::from_values(v, GradHistogram::BINS, scale).map(Some)
        }
    };
    let out = GradientHistograms {
        abs_correct: hist(&right.abs)?,
        abs_wrong: hist(&wrong.abs)?,
        rel_correct: hist(&right.rel)?,
        rel_wrong: hist(&wrong.rel)?,
        correct: n_right,
        wrong: n_wrong,
    };
    if out.named().is_empty() {
        return Err(Error::Invalid("no nonzero gradients observed".into()));
    }
    Ok(out)
}
