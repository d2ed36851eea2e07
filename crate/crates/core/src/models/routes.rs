//! Route and gradient-instance arithmetic.
//!
//! A route is a weight→output path. For a first-layer LeNet-5 weight, one
//! first-layer hidden unit feeds up to 25 positions of each second-layer
//! filter; pooling divides that by 4, and every survivor fans out through
//! both hidden fully connected layers.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Geometry, LeNet5Config};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    LeNet5,
    Tree3,
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lenet5" | "lenet" => Ok(Arch::LeNet5),
            "tree3" | "tree" => Ok(Arch::Tree3),
            other => Err(Error::Invalid(format!("unknown architecture `{other}` (expected lenet5 or tree3)"))),
        }
    }
}

/// Routes from one layer-1 hidden unit up to the first fully connected layer.
pub fn lenet5_pre_fc_routes(cfg: &LeNet5Config) -> u64 {
    (cfg.c2 as u64 * 25) / 4
}

/// Maximum number of distinct routes between a layer-1 weight and one output.
pub fn count_routes(arch: Arch) -> u64 {
    match arch {
        Arch::LeNet5 => {
            let cfg = LeNet5Config::default();
            lenet5_pre_fc_routes(&cfg) * cfg.f1 as u64 * cfg.f2 as u64
        }
        Arch::Tree3 => 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradientInstances {
    /// One instance per (filter weight, convolution position[, branch]).
    pub pre_pool: u64,
    /// Instances that can survive 2×2 max-pooling.
    pub post_pool: u64,
}

/// First-layer gradient instances on 32×32 CIFAR input.
///
/// Tree-3 counts `5·5·3·K·28·28·M` (every branch reuses every position);
/// LeNet-5 counts `5·5·3·6·28·28` and `k`, `m` are ignored.
pub fn count_gradient_instances(arch: Arch, k: usize, m: usize) -> GradientInstances {
    let g = Geometry::Cifar;
    let positions = (g.conv_side() * g.conv_side()) as u64;
    let per_filter = 25 * g.channels() as u64;
    let pre_pool = match arch {
        Arch::Tree3 => per_filter * k as u64 * positions * m as u64,
        Arch::LeNet5 => per_filter * LeNet5Config::default().c1 as u64 * positions,
    };
    GradientInstances {
        pre_pool,
        post_pool: pre_pool / 4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet5_route_count() {
        assert_eq!(lenet5_pre_fc_routes(&LeNet5Config::default()), 100);
        assert_eq!(count_routes(Arch::LeNet5), 1_008_000);
    }

    #[test]
    fn tree3_single_route() {
        assert_eq!(count_routes(Arch::Tree3), 1);
    }

    #[test]
    fn gradient_instances() {
        assert_eq!(count_gradient_instances(Arch::Tree3, 6, 16).pre_pool, 5_644_800);
        let l = count_gradient_instances(Arch::LeNet5, 0, 0);
        assert_eq!((l.pre_pool, l.post_pool), (352_800, 88_200));
    }

    #[test]
    fn arch_parsing() {
        assert_eq!("LeNet-5".parse::<Arch>().unwrap(), Arch::LeNet5);
        assert_eq!("tree3".parse::<Arch>().unwrap(), Arch::Tree3);
        assert!("vgg".parse::<Arch>().is_err());
    }
}
