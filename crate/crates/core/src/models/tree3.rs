//! Tree-3: grouped 5×5 conv shared by `M` branches, then per-branch tree
//! sampling over disjoint pooled rectangles and a fully connected head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian, InitScheme, CLASSES, CLASSIFIER_STD};
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::{conv2d_grouped, dense_forward, maxpool2x2, Activation, PoolTrace, Real, Tensor};

pub const KERNEL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Cifar,
    Mnist,
}

impl Geometry {
    pub fn name(self) -> &'static str {
        match self {
            Geometry::Cifar => "cifar",
            Geometry::Mnist => "mnist",
        }
    }

    pub fn dataset(self) -> DatasetKind {
        match self {
            Geometry::Cifar => DatasetKind::Cifar10,
            Geometry::Mnist => DatasetKind::Mnist,
        }
    }

    pub fn channels(self) -> usize {
        self.dataset().channels()
    }

    pub fn input_side(self) -> usize {
        self.dataset().side()
    }

    pub fn conv_side(self) -> usize {
        self.input_side() - KERNEL + 1
    }

    pub fn pool_side(self) -> usize {
        self.conv_side() / 2
    }

    /// Pooled rows covered by one tree rectangle (each spans the full width).
    pub fn band_rows(self) -> usize {
        match self {
            Geometry::Cifar => 2,
            Geometry::Mnist => 4,
        }
    }

    /// Rectangles per pooled map.
    pub fn bands(self) -> usize {
        self.pool_side() / self.band_rows()
    }

    pub fn band_len(self) -> usize {
        self.band_rows() * self.pool_side()
    }
}

/// How the tree layer maps onto the ten class outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeLayout {
    /// One tree whose head produces all ten logits.
    #[default]
    Joint,
    /// Ten trees sharing the conv filters, each producing one logit.
    PerClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tree3Config {
    pub k: usize,
    pub m: usize,
    pub activation: Activation,
    pub geometry: Geometry,
    #[serde(default)]
    pub layout: TreeLayout,
}

impl Tree3Config {
    pub fn cifar(k: usize, m: usize, activation: Activation) -> Self {
        Tree3Config {
            k,
            m,
            activation,
            geometry: Geometry::Cifar,
            layout: TreeLayout::Joint,
        }
    }

    pub fn mnist(k: usize, m: usize, activation: Activation) -> Self {
        Tree3Config {
            geometry: Geometry::Mnist,
            ..Self::cifar(k, m, activation)
        }
    }

    pub fn ten_tree(k: usize, m: usize, activation: Activation) -> Self {
        Tree3Config {
            layout: TreeLayout::PerClass,
            ..Self::cifar(k, m, activation)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 {
            return Err(Error::Invalid(format!(
                "tree3 needs K ≥ 1 and M ≥ 1 (got K={}, M={})",
                self.k, self.m
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.geometry.channels()
    }

    pub fn heads(&self) -> usize {
        match self.layout {
            TreeLayout::Joint => 1,
            TreeLayout::PerClass => CLASSES,
        }
    }

    pub fn head_outputs(&self) -> usize {
        match self.layout {
            TreeLayout::Joint => CLASSES,
            TreeLayout::PerClass => 1,
        }
    }

    /// Tree units per head: `M·C·R`.
    pub fn tree_units(&self) -> usize {
        self.m * self.channels() * self.geometry.bands()
    }

    pub fn conv_shape(&self) -> [usize; 4] {
        [self.channels(), self.k, KERNEL, KERNEL]
    }

    pub fn tree_shape(&self) -> [usize; 5] {
        let p = self.geometry.pool_side();
        [self.m, self.channels(), self.k, p, p]
    }

    pub fn fc_shape(&self) -> [usize; 2] {
        [self.tree_units(), self.head_outputs()]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.geometry.input_side();
        [self.channels(), s, s]
    }
}

/// Tree-sampling and output weights of one tree.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeHead<T = f32> {
    pub w_tree: Tensor<T>,
    pub w_fc: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree3Params<T = f32> {
    pub w_conv: Tensor<T>,
    pub heads: Vec<TreeHead<T>>,
}

impl<T: Real> Tree3Params<T> {
    pub fn zeros(config: &Tree3Config) -> Self {
        Tree3Params {
            w_conv: Tensor::zeros(config.conv_shape().to_vec()),
            heads: (0..config.heads())
                .map(|_| TreeHead {
                    w_tree: Tensor::zeros(config.tree_shape().to_vec()),
                    w_fc: Tensor::zeros(config.fc_shape().to_vec()),
                })
                .collect(),
        }
    }

    pub fn w_tree(&self) -> &Tensor<T> {
        &self.heads[0].w_tree
    }

    pub fn w_fc(&self) -> &Tensor<T> {
        &self.heads[0].w_fc
    }

    /// Parameter tensors in canonical order: conv, then (tree, fc) per head.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.w_conv];
        for h in &self.heads {
            v.push(&h.w_tree);
            v.push(&h.w_fc);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.w_conv];
        for h in &mut self.heads {
            v.push(&mut h.w_tree);
            v.push(&mut h.w_fc);
        }
        v
    }

    pub fn check(&self, config: &Tree3Config) -> Result<()> {
        let mismatch = |what: &str, want: &[usize], got: &[usize]| {
            Err(Error::ConfigMismatch(format!("{what}: expected shape {want:?}, got {got:?}")))
        };
        if self.w_conv.shape() != config.conv_shape() {
            return mismatch("w_conv", &config.conv_shape(), self.w_conv.shape());
        }
        if self.heads.len() != config.heads() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} tree heads, got {}",
                config.heads(),
                self.heads.len()
            )));
        }
        for h in &self.heads {
            if h.w_tree.shape() != config.tree_shape() {
                return mismatch("w_tree", &config.tree_shape(), h.w_tree.shape());
            }
            if h.w_fc.shape() != config.fc_shape() {
                return mismatch("w_fc", &config.fc_shape(), h.w_fc.shape());
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tree3Params<U> {
        Tree3Params {
            w_conv: self.w_conv.cast(),
            heads: self
                .heads
                .iter()
                .map(|h| TreeHead {
                    w_tree: h.w_tree.cast(),
                    w_fc: h.w_fc.cast(),
                })
                .collect(),
        }
    }
}

pub(crate) fn init_with<T: Real, R: Rng + ?Sized>(config: &Tree3Config, scheme: InitScheme, rng: &mut R) -> Tree3Params<T> {
    let g = config.geometry;
    let conv_fan_in = KERNEL * KERNEL;
    let tree_fan_in = g.band_len() * config.k;
    let w_conv = gaussian(config.conv_shape().to_vec(), scheme.std(conv_fan_in, config.k * conv_fan_in), rng);
    let heads = (0..config.heads())
        .map(|_| TreeHead {
            w_tree: gaussian(config.tree_shape().to_vec(), scheme.std(tree_fan_in, 1), rng),
            w_fc: gaussian(config.fc_shape().to_vec(), CLASSIFIER_STD, rng),
        })
        .collect();
    Tree3Params { w_conv, heads }
}

/// He-normal hidden layers and a small output layer, deterministic in `seed`.
pub fn init_tree3<T: Real>(config: &Tree3Config, seed: u64) -> Result<Tree3Params<T>> {
    config.validate()?;
    Ok(init_with(config, InitScheme::He, &mut stream(seed, Stream::Init)))
}

/// Activations of one tree head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrace<T = f32> {
    /// `M×C×R` pre-activation rectangle sums.
    pub tree_pre: Tensor<T>,
    pub tree_out: Tensor<T>,
    pub logits: Tensor<T>,
}

/// Everything a backward pass needs from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T = f32> {
    pub input: Tensor<T>,
    /// `(C·K)×Hc×Wc` conv outputs before the activation.
    pub conv_pre: Tensor<T>,
    /// Max-pool over the activated conv outputs.
    pub pool: PoolTrace<T>,
    pub heads: Vec<HeadTrace<T>>,
    pub logits: Tensor<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn tree_pre(&self) -> &Tensor<T> {
        &self.heads[0].tree_pre
    }

    pub fn tree_out(&self) -> &Tensor<T> {
        &self.heads[0].tree_out
    }
}

fn check_input<T: Real>(config: &Tree3Config, img: &Tensor<T>) -> Result<()> {
    if img.shape() != config.input_shape() {
        return Err(Error::ConfigMismatch(format!(
            "{} geometry expects a {:?} image, got {:?}",
            config.geometry.name(),
            config.input_shape(),
            img.shape()
        )));
    }
    Ok(())
}

fn conv_stage<T: Real>(w_conv: &Tensor<T>, config: &Tree3Config, img: &Tensor<T>) -> Result<(Tensor<T>, PoolTrace<T>)> {
    check_input(config, img)?;
    let conv_pre = conv2d_grouped(img, w_conv, config.channels())?;
    let pool = maxpool2x2(&config.activation.apply_tensor(&conv_pre))?;
    Ok((conv_pre, pool))
}

fn head_forward<T: Real>(head: &TreeHead<T>, config: &Tree3Config, pool: &Tensor<T>) -> Result<HeadTrace<T>> {
    let (m, c, k) = (config.m, config.channels(), config.k);
    let g = config.geometry;
    let (bands, band) = (g.bands(), g.band_len());
    let map = g.pool_side() * g.pool_side();
    let wt = head.w_tree.data();
    let pd = pool.data();
    let mut tree_pre = Tensor::zeros(vec![m, c, bands]);
    let out = tree_pre.data_mut();
    for b in 0..m {
        for ci in 0..c {
            for r in 0..bands {
                let mut s = T::zero();
                for ki in 0..k {
                    let ch = ci * k + ki;
                    let w = &wt[((b * c + ci) * k + ki) * map + r * band..][..band];
                    let x = &pd[ch * map + r * band..][..band];
                    for (&wv, &xv) in w.iter().zip(x) {
                        s += wv * xv;
                    }
                }
                out[(b * c + ci) * bands + r] = s;
            }
        }
    }
    let tree_out = config.activation.apply_tensor(&tree_pre);
    let logits = dense_forward(&tree_out, &head.w_fc, None)?;
    Ok(HeadTrace {
        tree_pre,
        tree_out,
        logits,
    })
}

fn forward_heads<T: Real>(
    w_conv: &Tensor<T>,
    heads: &[TreeHead<T>],
    config: &Tree3Config,
    img: &Tensor<T>,
) -> Result<ForwardTrace<T>> {
    let (conv_pre, pool) = conv_stage(w_conv, config, img)?;
    let traces = heads
        .iter()
        .map(|h| head_forward(h, config, &pool.output))
        .collect::<Result<Vec<_>>>()?;
    let logits = match config.layout {
        TreeLayout::Joint => traces[0].logits.clone(),
        TreeLayout::PerClass => Tensor::new(vec![CLASSES], traces.iter().map(|t| t.logits.data()[0]).collect())?,
    };
    Ok(ForwardTrace {
        input: img.clone(),
        conv_pre,
        pool,
        heads: traces,
        logits,
    })
}

/// Full forward pass for any geometry and layout.
pub fn tree3_forward<T: Real>(params: &Tree3Params<T>, config: &Tree3Config, img: &Tensor<T>) -> Result<ForwardTrace<T>> {
    params.check(config)?;
    forward_heads(&params.w_conv, &params.heads, config, img)
}

/// [`tree3_forward`] restricted to the single-channel 28×28 geometry.
pub fn tree3_mnist_forward<T: Real>(
    params: &Tree3Params<T>,
    config: &Tree3Config,
    img: &Tensor<T>,
) -> Result<ForwardTrace<T>> {
    if config.geometry != Geometry::Mnist {
        return Err(Error::ConfigMismatch(format!(
            "expected mnist geometry, got {}",
            config.geometry.name()
        )));
    }
    tree3_forward(params, config, img)
}

/// Ten single-output trees over one shared conv layer; returns the ten logits.
pub fn ten_tree_forward<T: Real>(
    shared_conv: &Tensor<T>,
    trees: &[TreeHead<T>],
    config: &Tree3Config,
    img: &Tensor<T>,
) -> Result<Tensor<T>> {
    if trees.len() != CLASSES {
        return Err(Error::Invalid(format!("ten-tree model needs {CLASSES} trees, got {}", trees.len())));
    }
    let cfg = Tree3Config {
        layout: TreeLayout::PerClass,
        ..*config
    };
    let params = Tree3Params {
        w_conv: shared_conv.clone(),
        heads: trees.to_vec(),
    };
    params.check(&cfg)?;
    Ok(forward_heads(shared_conv, trees, &cfg, img)?.logits)
}
