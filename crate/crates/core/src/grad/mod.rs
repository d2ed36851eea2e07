//! Backward passes, gradient thresholding and gradient statistics.

pub mod gradcheck;
pub mod histogram;
pub mod pruned;
pub mod reference;
pub mod routes;
pub mod sparsity;
pub mod suite;
pub mod threshold;

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{lenet5_forward, tree3_forward, Model};
use crate::tensor::{softmax_xent, Activation, Real, Tensor};

pub use histogram::{histogram_gradients, magnitude_quantile, GradHistogram, HistMode, HistScale};
pub use pruned::{backward_pruned_thresholded, backward_pruned_tree3};
pub use reference::{backward_reference, backward_reference_lenet5};
pub use routes::{for_each_conv_route, ConvRoute};
pub use sparsity::{accumulate_sparsity, SparsityStats};
pub use threshold::{find_threshold_for_fraction, threshold_for_fraction, threshold_gradients};

/// Coarse layer groups used for statistics.
///
/// For Tree-3 these are the conv, tree-sampling and output layers. For
/// LeNet-5 they are the first conv layer, the second conv layer and the
/// three fully connected layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Conv,
    Tree,
    Fc,
}

pub const STAGES: [Stage; 3] = [Stage::Conv, Stage::Tree, Stage::Fc];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Conv => "conv",
            Stage::Tree => "tree",
            Stage::Fc => "fc",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub zeros: u64,
    pub total: u64,
}

impl Count {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.zeros as f64 / self.total as f64
        }
    }

    pub fn nonzeros(&self) -> u64 {
        self.total - self.zeros
    }
}

/// Zero and total gradient-instance counts per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroCounts {
    pub conv: Count,
    pub tree: Count,
    pub fc: Count,
}

impl ZeroCounts {
    pub fn fractions(&self) -> [f64; 3] {
        STAGES.map(|s| self[s].fraction())
    }

    pub fn add(&mut self, other: &ZeroCounts) {
        for s in STAGES {
            self[s].zeros += other[s].zeros;
            self[s].total += other[s].total;
        }
    }

    pub(crate) fn record(&mut self, stage: Stage, total: u64, nonzeros: u64) {
        self[stage].total += total;
        self[stage].zeros += total - nonzeros;
    }
}

impl Index<Stage> for ZeroCounts {
    type Output = Count;
    fn index(&self, s: Stage) -> &Count {
        match s {
            Stage::Conv => &self.conv,
            Stage::Tree => &self.tree,
            Stage::Fc => &self.fc,
        }
    }
}

impl IndexMut<Stage> for ZeroCounts {
    fn index_mut(&mut self, s: Stage) -> &mut Count {
        match s {
            Stage::Conv => &mut self.conv,
            Stage::Tree => &mut self.tree,
            Stage::Fc => &mut self.fc,
        }
    }
}

/// Parameter gradients, one tensor per parameter tensor in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle<T = f32> {
    pub grads: Vec<Tensor<T>>,
    pub stages: Vec<Stage>,
    pub zero_counts: ZeroCounts,
}

impl<T: Real> GradBundle<T> {
    /// All-zero gradients shaped like `model`, with empty counts.
    pub fn zeros_like(model: &Model<T>) -> Self {
        GradBundle {
            grads: model.tensors().into_iter().map(Tensor::zeros_like).collect(),
            stages: stages_of(model),
            zero_counts: ZeroCounts::default(),
        }
    }

    pub fn g_conv(&self) -> &Tensor<T> {
        &self.grads[0]
    }

    /// Tree-sampling gradient of the first (or only) Tree-3 head.
    pub fn g_tree(&self) -> &Tensor<T> {
        &self.grads[1]
    }

    /// Output-layer gradient of the first (or only) Tree-3 head.
    pub fn g_fc(&self) -> &Tensor<T> {
        &self.grads[2]
    }

    pub fn len(&self) -> usize {
        self.grads.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nonzeros(&self) -> usize {
        self.grads
            .iter()
            .map(|g| g.data().iter().filter(|x| !x.is_zero()).count())
            .sum()
    }

    pub fn add_assign(&mut self, other: &GradBundle<T>) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::shape("GradBundle::add_assign", "tensor count", self.grads.len(), other.grads.len()));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if !a.same_shape(b) {
                return Err(Error::shape("GradBundle::add_assign", "tensor length", a.len(), b.len()));
            }
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        self.zero_counts.add(&other.zero_counts);
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Largest elementwise `|a−b| / max(|a|,|b|,floor)` and its `(tensor, index)`.
    pub fn max_rel_diff(&self, other: &GradBundle<T>, floor: f64) -> (f64, Option<(usize, usize)>) {
        let mut worst = (0.0, None);
        for (ti, (a, b)) in self.grads.iter().zip(&other.grads).enumerate() {
            for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
                let (x, y) = (x.f64(), y.f64());
                let d = (x - y).abs() / x.abs().max(y.abs()).max(floor);
                if d > worst.0 || d.is_nan() {
                    worst = (d, Some((ti, i)));
                }
            }
        }
        worst
    }

    /// Exact equality of every gradient entry under `==`.
    pub fn values_equal(&self, other: &GradBundle<T>) -> bool {
        self.grads.len() == other.grads.len()
            && self
                .grads
                .iter()
                .zip(&other.grads)
                .all(|(a, b)| a.same_shape(b) && a.data() == b.data())
    }
}

pub(crate) fn stages_of<T: Real>(model: &Model<T>) -> Vec<Stage> {
    match model {
        Model::Tree3 { config, .. } => {
            let mut v = vec![Stage::Conv];
            for _ in 0..config.heads() {
                v.extend([Stage::Tree, Stage::Fc]);
            }
            v
        }
        Model::LeNet5 { params, .. } => {
            let mut v = Vec::new();
            for (l, stage) in params.layers().iter().zip([Stage::Conv, Stage::Tree, Stage::Fc, Stage::Fc, Stage::Fc]) {
                v.push(stage);
                if l.b.is_some() {
                    v.push(stage);
                }
            }
            v
        }
    }
}

/// Which backward pass to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Reference,
    /// Single-route pruned pass; ReLU Tree-3 only.
    Pruned,
}

impl Engine {
    /// The pruned pass when requested and applicable, the reference pass otherwise.
    pub fn select<T: Real>(pruned: bool, model: &Model<T>) -> Engine {
        match model {
            Model::Tree3 { config, .. } if pruned && config.activation == Activation::Relu => Engine::Pruned,
            _ => Engine::Reference,
        }
    }
}

/// Loss, logits and gradients for one labelled example.
#[derive(Clone, Debug)]
pub struct ExampleGrad<T = f32> {
    pub loss: T,
    pub logits: Tensor<T>,
    pub bundle: GradBundle<T>,
}

/// Forward then backward through `model` for one example.
pub fn example_gradients<T: Real>(model: &Model<T>, img: &Tensor<T>, label: usize, engine: Engine) -> Result<ExampleGrad<T>> {
    match model {
        Model::Tree3 { config, params } => {
            let trace = tree3_forward(params, config, img)?;
            let (loss, _) = softmax_xent(&trace.logits, label)?;
            let bundle = match engine {
                Engine::Reference => backward_reference(params, config, &trace, label)?,
                Engine::Pruned => backward_pruned_tree3(params, config, &trace, label)?,
            };
            Ok(ExampleGrad {
                loss,
                logits: trace.logits,
                bundle,
            })
        }
        Model::LeNet5 { config, params } => {
            if engine == Engine::Pruned {
                return Err(Error::Unsupported("the pruned backward pass exists only for ReLU Tree-3".into()));
            }
            let trace = lenet5_forward(params, config, img)?;
            let (loss, _) = softmax_xent(&trace.logits, label)?;
            let bundle = backward_reference_lenet5(params, config, &trace, label)?;
            Ok(ExampleGrad {
                loss,
                logits: trace.logits,
                bundle,
            })
        }
    }
}

/// Number of nonzero entries in the `kh×kw` window at `(i, j)` of `plane`, by direct scan.
pub(crate) fn patch_nonzeros<T: Real>(plane: &[T], width: usize, i: usize, j: usize, kh: usize, kw: usize) -> u64 {
    let mut n = 0;
    for u in 0..kh {
        for v in 0..kw {
            if !plane[(i + u) * width + j + v].is_zero() {
                n += 1;
            }
        }
    }
    n
}

/// Summed-area table of nonzero indicators for constant-time window counts.
pub(crate) struct NonzeroTable {
    width: usize,
    sums: Vec<u32>,
}

impl NonzeroTable {
    pub(crate) fn new<T: Real>(plane: &[T], height: usize, width: usize) -> Self {
        let w1 = width + 1;
        let mut sums = vec![0u32; (height + 1) * w1];
        for i in 0..height {
            let mut row = 0;
            for j in 0..width {
                row += u32::from(!plane[i * width + j].is_zero());
                sums[(i + 1) * w1 + j + 1] = sums[i * w1 + j + 1] + row;
            }
        }
        NonzeroTable { width: w1, sums }
    }

    pub(crate) fn window(&self, i: usize, j: usize, kh: usize, kw: usize) -> u64 {
        let w = self.width;
        let s = &self.sums;
        u64::from(s[(i + kh) * w + j + kw] + s[i * w + j] - s[i * w + j + kw] - s[(i + kh) * w + j])
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    pub use super::suite::tree3_instance as instance;
}
