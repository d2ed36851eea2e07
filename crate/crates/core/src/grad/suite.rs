//! Randomized oracle suites shared by the `gradcheck` command and the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_reference, finite_difference_check, FdReport, FD_EPS, FD_FLOOR};
use super::{backward_pruned_tree3, backward_reference, example_gradients, Engine, GradBundle};
use crate::error::Result;
use crate::models::{init_tree3, tree3_forward, Geometry, InitScheme, LeNet5Config, Model, ModelSpec, Tree3Config, Tree3Params, TreeLayout};
use crate::tensor::{Activation, Real, Tensor};

/// Deliberate corruption of an analytic gradient, to prove the checks bite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Negate the largest-magnitude entry of the first gradient tensor.
    SignFlip,
}

impl Fault {
    pub fn apply<T: Real>(self, bundle: &mut GradBundle<T>) {
        if self == Fault::SignFlip {
            let g = &mut bundle.grads[0];
            let big = g.max_abs();
            if let Some(i) = g.data().iter().position(|x| x.abs() == big) {
                g.data_mut()[i] = -g.data()[i];
            }
        }
    }
}

/// Random parameters and an input with quantized pixels, about a tenth of
/// them exactly zero as in real images.
pub fn tree3_instance<T: Real>(cfg: &Tree3Config, seed: u64) -> (Tree3Params<T>, Tensor<T>, usize) {
    let params = init_tree3(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let img = Tensor::from_fn(cfg.input_shape().to_vec(), |_| {
        T::of((rng.random_range(0..=255u8) as f64 - 127.5) / 127.5 * f64::from(rng.random_bool(0.9)))
    });
    (params, img, rng.random_range(0..10))
}

/// Width-reduced LeNet-5 used by the finite-difference suite.
pub const SMALL_LENET5: LeNet5Config = LeNet5Config {
    activation: Activation::Relu,
    bias: true,
    c1: 2,
    c2: 3,
    f1: 8,
    f2: 6,
};

pub fn lenet5_instance(cfg: &LeNet5Config, seed: u64) -> Result<(Model<f64>, Tensor<f64>, usize)> {
    let model = Model::<f64>::init(&ModelSpec::LeNet5(*cfg), seed, InitScheme::He)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = Tensor::from_fn(vec![3, 32, 32], |_| rng.random_range(-1.0..1.0));
    Ok((model, img, rng.random_range(0..10)))
}

/// Pruned-vs-reference comparison over random Tree-3 instances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EquivalenceReport {
    pub cases: usize,
    /// 64-bit cases whose gradients or zero counts differ in any bit.
    pub f64_mismatches: usize,
    /// Largest relative difference seen in 32-bit.
    pub f32_max_rel: f64,
    /// Description of the first failing case.
    pub first_failure: Option<String>,
}

impl EquivalenceReport {
    pub fn passed(&self, f32_tol: f64) -> bool {
        self.f64_mismatches == 0 && self.f32_max_rel < f32_tol
    }
}

fn compare<T: Real>(cfg: &Tree3Config, seed: u64, fault: Fault) -> Result<(bool, f64, Option<(usize, usize)>)> {
    let (params, img, label) = tree3_instance::<T>(cfg, seed);
    let trace = tree3_forward(&params, cfg, &img)?;
    let reference = backward_reference(&params, cfg, &trace, label)?;
    let mut pruned = backward_pruned_tree3(&params, cfg, &trace, label)?;
    fault.apply(&mut pruned);
    let (rel, at) = pruned.max_rel_diff(&reference, 1e-30);
    let same = pruned.values_equal(&reference) && pruned.zero_counts == reference.zero_counts;
    Ok((same, rel, at))
}

/// Draws `cases` ReLU Tree-3 configurations with `K ≤ max_k`, `M ≤ max_m`,
/// both geometries and both layouts, and compares the two backward passes.
pub fn pruned_equivalence_suite(cases: usize, seed: u64, max_k: usize, max_m: usize, fault: Fault) -> Result<EquivalenceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EquivalenceReport {
        cases,
        ..Default::default()
    };
    for case in 0..cases {
        let cfg = Tree3Config {
            k: rng.random_range(1..=max_k),
            m: rng.random_range(1..=max_m),
            activation: Activation::Relu,
            geometry: if rng.random_bool(0.5) { Geometry::Cifar } else { Geometry::Mnist },
            layout: if rng.random_bool(0.2) { TreeLayout::PerClass } else { TreeLayout::Joint },
        };
        let s = rng.random();
        let (same, _, at64) = compare::<f64>(&cfg, s, fault)?;
        let (_, rel32, at32) = compare::<f32>(&cfg, s, fault)?;
        report.f32_max_rel = report.f32_max_rel.max(rel32);
        if !same {
            report.f64_mismatches += 1;
        }
        if (!same || rel32 >= 1e-5) && report.first_failure.is_none() {
            report.first_failure = Some(format!(
                "case {case} ({}, seed {s}): 64-bit worst (tensor, index) {:?}, 32-bit worst {:?} rel {rel32:e}",
                ModelSpec::Tree3(cfg).describe(),
                at64,
                at32
            ));
        }
    }
    Ok(report)
}

/// Finite-difference check of the reference pass on a K=2, M=2 Tree-3.
pub fn fd_tree3(seed: u64, activation: Activation, fault: Fault) -> Result<FdReport> {
    let cfg = Tree3Config::cifar(2, 2, activation);
    let (params, img, label) = tree3_instance::<f64>(&cfg, seed);
    fd_model(&Model::Tree3 { config: cfg, params }, &img, label, fault)
}

/// Finite-difference check of the reference pass on [`SMALL_LENET5`].
pub fn fd_lenet5(seed: u64, fault: Fault) -> Result<FdReport> {
    let (model, img, label) = lenet5_instance(&SMALL_LENET5, seed)?;
    fd_model(&model, &img, label, fault)
}

fn fd_model(model: &Model<f64>, img: &Tensor<f64>, label: usize, fault: Fault) -> Result<FdReport> {
    if fault == Fault::None {
        return check_reference(model, img, label, FD_EPS, FD_FLOOR);
    }
    let mut g = example_gradients(model, img, label, Engine::Reference)?.bundle;
    fault.apply(&mut g);
    finite_difference_check(model, img, label, &g, FD_EPS, FD_FLOOR)
}
