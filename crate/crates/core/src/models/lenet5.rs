//! LeNet-5 baseline for 3×32×32 input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian, InitScheme, CLASSES, CLASSIFIER_STD};
use crate::error::{Error, Result};
use crate::tensor::{conv2d_full, dense_forward, maxpool2x2, Activation, PoolTrace, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeNet5Config {
    pub activation: Activation,
    pub bias: bool,
    pub c1: usize,
    pub c2: usize,
    pub f1: usize,
    pub f2: usize,
}

impl Default for LeNet5Config {
    fn default() -> Self {
        LeNet5Config {
            activation: Activation::Relu,
            bias: true,
            c1: 6,
            c2: 16,
            f1: 120,
            f2: 84,
        }
    }
}

impl LeNet5Config {
    pub fn validate(&self) -> Result<()> {
        if [self.c1, self.c2, self.f1, self.f2].contains(&0) {
            return Err(Error::Invalid("lenet5 layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn flat_len(&self) -> usize {
        self.c2 * 25
    }

    /// `(name, shape)` of every parameter tensor in canonical order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let mut v = vec![("conv1", vec![self.c1, 3, 5, 5])];
        if self.bias {
            v.push(("conv1.bias", vec![self.c1]));
        }
        v.push(("conv2", vec![self.c2, self.c1, 5, 5]));
        if self.bias {
            v.push(("conv2.bias", vec![self.c2]));
        }
        for (name, bname, n, m) in [
            ("fc1", "fc1.bias", self.flat_len(), self.f1),
            ("fc2", "fc2.bias", self.f1, self.f2),
            ("fc3", "fc3.bias", self.f2, CLASSES),
        ] {
            v.push((name, vec![n, m]));
            if self.bias {
                v.push((bname, vec![m]));
            }
        }
        v
    }
}

/// One weight tensor plus its optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
}

impl<T: Real> Layer<T> {
    fn cast<U: Real>(&self) -> Layer<U> {
        Layer {
            w: self.w.cast(),
            b: self.b.as_ref().map(Tensor::cast),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeNet5Params<T = f32> {
    pub conv1: Layer<T>,
    pub conv2: Layer<T>,
    pub fc1: Layer<T>,
    pub fc2: Layer<T>,
    pub fc3: Layer<T>,
}

impl<T: Real> LeNet5Params<T> {
    pub fn zeros(config: &LeNet5Config) -> Self {
        let mut shapes = config.layout().into_iter();
        let mut layer = || {
            let w = Tensor::zeros(shapes.next().unwrap().1);
            let b = config.bias.then(|| Tensor::zeros(shapes.next().unwrap().1));
            Layer { w, b }
        };
        LeNet5Params {
            conv1: layer(),
            conv2: layer(),
            fc1: layer(),
            fc2: layer(),
            fc3: layer(),
        }
    }

    pub fn layers(&self) -> [&Layer<T>; 5] {
        [&self.conv1, &self.conv2, &self.fc1, &self.fc2, &self.fc3]
    }

    /// Parameter tensors in canonical order (weight, then bias, per layer).
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for l in self.layers() {
            v.push(&l.w);
            if let Some(b) = &l.b {
                v.push(b);
            }
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for l in [&mut self.conv1, &mut self.conv2, &mut self.fc1, &mut self.fc2, &mut self.fc3] {
            v.push(&mut l.w);
            if let Some(b) = &mut l.b {
                v.push(b);
            }
        }
        v
    }

    pub fn check(&self, config: &LeNet5Config) -> Result<()> {
        let layout = config.layout();
        let tensors = self.tensors();
        if layout.len() != tensors.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} lenet5 tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> LeNet5Params<U> {
        LeNet5Params {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            fc1: self.fc1.cast(),
            fc2: self.fc2.cast(),
            fc3: self.fc3.cast(),
        }
    }
}

pub(crate) fn init_with<T: Real, R: Rng + ?Sized>(config: &LeNet5Config, scheme: InitScheme, rng: &mut R) -> LeNet5Params<T> {
    let mut p = LeNet5Params::zeros(config);
    let stds = [
        scheme.std(75, config.c1 * 25),
        scheme.std(config.c1 * 25, config.c2 * 25),
        scheme.std(config.flat_len(), config.f1),
        scheme.std(config.f1, config.f2),
        CLASSIFIER_STD,
    ];
    for (l, std) in [&mut p.conv1, &mut p.conv2, &mut p.fc1, &mut p.fc2, &mut p.fc3].into_iter().zip(stds) {
        l.w = gaussian(l.w.shape().to_vec(), std, rng);
    }
    p
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeNet5Trace<T = f32> {
    pub input: Tensor<T>,
    pub c1_pre: Tensor<T>,
    pub pool1: PoolTrace<T>,
    pub c2_pre: Tensor<T>,
    pub pool2: PoolTrace<T>,
    /// Flattened `pool2` output (length 400 at default widths).
    pub flat: Tensor<T>,
    pub f1_pre: Tensor<T>,
    pub f1_out: Tensor<T>,
    pub f2_pre: Tensor<T>,
    pub f2_out: Tensor<T>,
    pub logits: Tensor<T>,
}

pub fn lenet5_forward<T: Real>(params: &LeNet5Params<T>, config: &LeNet5Config, img: &Tensor<T>) -> Result<LeNet5Trace<T>> {
    params.check(config)?;
    if img.shape() != [3, 32, 32] {
        return Err(Error::ConfigMismatch(format!(
            "lenet5 expects a [3, 32, 32] image, got {:?}",
            img.shape()
        )));
    }
    let act = config.activation;
    let c1_pre = conv2d_full(img, &params.conv1.w, params.conv1.b.as_ref())?;
    let pool1 = maxpool2x2(&act.apply_tensor(&c1_pre))?;
    let c2_pre = conv2d_full(&pool1.output, &params.conv2.w, params.conv2.b.as_ref())?;
    let pool2 = maxpool2x2(&act.apply_tensor(&c2_pre))?;
    let flat = pool2.output.clone().reshape(vec![config.flat_len()])?;
    let f1_pre = dense_forward(&flat, &params.fc1.w, params.fc1.b.as_ref())?;
    let f1_out = act.apply_tensor(&f1_pre);
    let f2_pre = dense_forward(&f1_out, &params.fc2.w, params.fc2.b.as_ref())?;
    let f2_out = act.apply_tensor(&f2_pre);
    let logits = dense_forward(&f2_out, &params.fc3.w, params.fc3.b.as_ref())?;
    Ok(LeNet5Trace {
        input: img.clone(),
        c1_pre,
        pool1,
        c2_pre,
        pool2,
        flat,
        f1_pre,
        f1_out,
        f2_pre,
        f2_out,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64, cfg: &LeNet5Config) -> LeNet5Params<f64> {
        let mut p: LeNet5Params<f64> = init_with(cfg, InitScheme::He, &mut stream(seed, Stream::Init));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in [&mut p.conv1, &mut p.conv2, &mut p.fc1, &mut p.fc2, &mut p.fc3] {
            if let Some(b) = &mut l.b {
                b.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1));
            }
        }
        p
    }

    fn naive(p: &LeNet5Params<f64>, img: &Tensor<f64>) -> Vec<f64> {
        let relu = |x: f64| x.max(0.0);
        let conv_pool = |x: &Vec<Vec<Vec<f64>>>, l: &Layer<f64>| -> Vec<Vec<Vec<f64>>> {
            let (nf, c) = (l.w.shape()[0], l.w.shape()[1]);
            let side = x[0].len() - 4;
            (0..nf)
                .map(|f| {
                    let conv = |i: usize, j: usize| {
                        let mut s = l.b.as_ref().map_or(0.0, |b| b.data()[f]);
                        for ci in 0..c {
                            for u in 0..5 {
                                for v in 0..5 {
                                    s += l.w.at(&[f, ci, u, v]) * x[ci][i + u][j + v];
                                }
                            }
                        }
                        relu(s)
                    };
                    (0..side / 2)
                        .map(|i| {
                            (0..side / 2)
                                .map(|j| {
                                    conv(2 * i, 2 * j)
                                        .max(conv(2 * i, 2 * j + 1))
                                        .max(conv(2 * i + 1, 2 * j))
                                        .max(conv(2 * i + 1, 2 * j + 1))
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        };
        let fc = |x: &[f64], l: &Layer<f64>, act: bool| -> Vec<f64> {
            let (n, m) = (l.w.shape()[0], l.w.shape()[1]);
            (0..m)
                .map(|j| {
                    let s = l.b.as_ref().map_or(0.0, |b| b.data()[j])
                        + (0..n).map(|i| x[i] * l.w.at(&[i, j])).sum::<f64>();
                    if act {
                        relu(s)
                    } else {
                        s
                    }
                })
                .collect()
        };
        let x: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|c| (0..32).map(|i| (0..32).map(|j| img.at(&[c, i, j])).collect()).collect())
            .collect();
        let h2 = conv_pool(&conv_pool(&x, &p.conv1), &p.conv2);
        let flat: Vec<f64> = h2.into_iter().flatten().flatten().collect();
        assert_eq!(flat.len(), 400);
        let h = fc(&flat, &p.fc1, true);
        let h = fc(&h, &p.fc2, true);
        fc(&h, &p.fc3, false)
    }

    #[test]
    fn default_shapes() {
        let cfg = LeNet5Config::default();
        let p: LeNet5Params<f32> = init_with(&cfg, InitScheme::He, &mut stream(1, Stream::Init));
        let t = lenet5_forward(&p, &cfg, &Tensor::zeros(vec![3, 32, 32])).unwrap();
        assert_eq!(t.pool1.output.shape(), [6, 14, 14]);
        assert_eq!(t.pool2.output.shape(), [16, 5, 5]);
        assert_eq!(t.flat.len(), 400);
        assert_eq!(t.f1_out.len(), 120);
        assert_eq!(t.f2_out.len(), 84);
        assert_eq!(t.logits.len(), 10);
        assert_eq!(p.tensors().len(), 10);
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let cfg = LeNet5Config::default();
        let p = LeNet5Params::<f32>::zeros(&cfg);
        let img = Tensor::from_fn(vec![3, 32, 32], |i| (i % 5) as f32 * 0.1);
        let t = lenet5_forward(&p, &cfg, &img).unwrap();
        assert!(t.logits.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matches_loop_oracle() {
        let cfg = LeNet5Config::default();
        for seed in 0..3 {
            let p = params(seed, &cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let img = Tensor::from_fn(vec![3, 32, 32], |_| rng.random_range(-1.0..1.0));
            let got = lenet5_forward(&p, &cfg, &img).unwrap().logits;
            for (a, b) in got.data().iter().zip(naive(&p, &img)) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_wrong_input() {
        let cfg = LeNet5Config::default();
        let p = LeNet5Params::<f32>::zeros(&cfg);
        assert!(lenet5_forward(&p, &cfg, &Tensor::zeros(vec![1, 28, 28])).is_err());
    }

    #[test]
    fn biasless_layout() {
        let cfg = LeNet5Config {
            bias: false,
            ..Default::default()
        };
        assert_eq!(LeNet5Params::<f32>::zeros(&cfg).tensors().len(), 5);
    }
}
