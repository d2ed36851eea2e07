//! Parameter containers, initialization and forward passes.

pub mod lenet5;
pub mod routes;
pub mod tree3;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::DatasetKind;
use crate::error::Result;
use crate::rng::{stream, Stream};
use crate::tensor::{Real, Tensor};

pub use lenet5::{lenet5_forward, LeNet5Config, LeNet5Params, LeNet5Trace};
pub use routes::{count_gradient_instances, count_routes, Arch, GradientInstances};
pub use tree3::{
    init_tree3, ten_tree_forward, tree3_forward, tree3_mnist_forward, ForwardTrace, Geometry, HeadTrace, Tree3Config,
    Tree3Params, TreeHead, TreeLayout,
};

pub const CLASSES: usize = 10;

/// Std of the output (logit) layer under every scheme. Hidden layers follow
/// the scheme; a He-scaled output layer starts training with a loss well
/// above ln 10.
pub const CLASSIFIER_STD: f64 = 0.01;

/// Weight initialization scheme for hidden layers. He normal is the default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    #[default]
    He,
    Glorot,
}

impl InitScheme {
    pub fn std(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::He => (2.0 / fan_in as f64).sqrt(),
            InitScheme::Glorot => (2.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

pub(crate) fn gaussian<T: Real, R: Rng + ?Sized>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::of(z * std)
    })
}

/// Architecture description, independent of weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    Tree3(Tree3Config),
    LeNet5(LeNet5Config),
}

impl ModelSpec {
    pub fn dataset(&self) -> DatasetKind {
        match self {
            ModelSpec::Tree3(c) => c.geometry.dataset(),
            ModelSpec::LeNet5(_) => DatasetKind::Cifar10,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let k = self.dataset();
        [k.channels(), k.side(), k.side()]
    }

    pub fn describe(&self) -> String {
        match self {
            ModelSpec::Tree3(c) => format!(
                "{} K={} M={} {} {}",
                match c.layout {
                    TreeLayout::Joint => "tree3",
                    TreeLayout::PerClass => "ten-tree3",
                },
                c.k,
                c.m,
                c.geometry.name(),
                c.activation.name()
            ),
            ModelSpec::LeNet5(c) => format!(
                "lenet5 {}-{}-{}-{} {}{}",
                c.c1,
                c.c2,
                c.f1,
                c.f2,
                c.activation.name(),
                if c.bias { " +bias" } else { "" }
            ),
        }
    }
}

/// A network with its weights.
#[derive(Clone, Debug, PartialEq)]
pub enum Model<T = f32> {
    Tree3 { config: Tree3Config, params: Tree3Params<T> },
    LeNet5 { config: LeNet5Config, params: LeNet5Params<T> },
}

impl<T: Real> Model<T> {
    pub fn init(spec: &ModelSpec, seed: u64, scheme: InitScheme) -> Result<Self> {
        let mut rng = stream(seed, Stream::Init);
        Ok(match *spec {
            ModelSpec::Tree3(config) => {
                config.validate()?;
                Model::Tree3 {
                    config,
                    params: tree3::init_with(&config, scheme, &mut rng),
                }
            }
            ModelSpec::LeNet5(config) => {
                config.validate()?;
                Model::LeNet5 {
                    config,
                    params: lenet5::init_with(&config, scheme, &mut rng),
                }
            }
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Tree3 { config, .. } => ModelSpec::Tree3(*config),
            Model::LeNet5 { config, .. } => ModelSpec::LeNet5(*config),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        match self {
            Model::Tree3 { params, .. } => params.tensors(),
            Model::LeNet5 { params, .. } => params.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Model::Tree3 { params, .. } => params.tensors_mut(),
            Model::LeNet5 { params, .. } => params.tensors_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn logits(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Model::Tree3 { config, params } => Ok(tree3_forward(params, config, img)?.logits),
            Model::LeNet5 { config, params } => Ok(lenet5_forward(params, config, img)?.logits),
        }
    }

    pub fn predict(&self, img: &Tensor<T>) -> Result<usize> {
        Ok(crate::tensor::argmax(self.logits(img)?.data()))
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        match self {
            Model::Tree3 { config, params } => Model::Tree3 {
                config: *config,
                params: params.cast(),
            },
            Model::LeNet5 { config, params } => Model::LeNet5 {
                config: *config,
                params: params.cast(),
            },
        }
    }
}
