//! Training plans and the built-in presets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::AugmentPolicy;
use crate::error::{Error, Result};
use crate::models::{Arch, Geometry, InitScheme, LeNet5Config, ModelSpec, Tree3Config, TreeLayout};
use crate::optim::{HyperParams, Schedule};
use crate::tensor::Activation;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Several shuffled passes over the training set.
    #[default]
    Offline,
    /// One pass in stored order; every example is seen once.
    Online,
}

/// Gradient magnitude cut applied during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Drop every gradient instance with `|Δ| < θ`.
    Theta(f64),
    /// Re-derive θ periodically so this share of gradient instances stays active.
    ActiveFraction(f64),
}

impl FromStr for Threshold {
    type Err = Error;
    /// `1e-4` is a fixed θ; `0.6%` keeps that share of instances active.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("bad threshold `{s}` (expected a number like 1e-4 or a percentage like 0.6%)"));
        if let Some(p) = s.trim().strip_suffix('%') {
            let f: f64 = p.trim().parse().map_err(|_| bad())?;
            if !(f > 0.0 && f <= 100.0) {
                return Err(bad());
            }
            return Ok(Threshold::ActiveFraction(f / 100.0));
        }
        let t: f64 = s.trim().parse().map_err(|_| bad())?;
        if !(t >= 0.0) {
            return Err(bad());
        }
        Ok(Threshold::Theta(t))
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Theta(t) => write!(f, "{t:e}"),
            Threshold::ActiveFraction(a) => write!(f, "{}%", a * 100.0),
        }
    }
}

fn default_true() -> bool {
    true
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Everything needed to reproduce one training run. Serializes as a flat
/// JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub name: String,
    pub arch: Arch,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub m: usize,
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    #[serde(default)]
    pub layout: TreeLayout,
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub bias: bool,
    /// Nominal learning rate; the schedule decides the rate actually used.
    pub eta: f64,
    pub mu: f64,
    pub alpha: f64,
    pub batch: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub augment_shift: usize,
    #[serde(default)]
    pub hflip: bool,
    #[serde(default)]
    pub mode: Mode,
    /// Use only the first `dataset_size` training examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pruned_bp: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
    #[serde(default)]
    pub init: InitScheme,
    /// Full-scale run; the CLI asks for `--full` (or `--epochs`) first.
    #[serde(default, skip_serializing_if = "is_false")]
    pub full_scale: bool,
    /// Accuracy reported for this configuration in the literature, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_accuracy: Option<f64>,
}

fn default_geometry() -> Geometry {
    Geometry::Cifar
}

impl TrainPlan {
    pub fn model_spec(&self) -> ModelSpec {
        match self.arch {
            Arch::Tree3 => ModelSpec::Tree3(Tree3Config {
                k: self.k,
                m: self.m,
                activation: self.activation,
                geometry: self.geometry,
                layout: self.layout,
            }),
            Arch::LeNet5 => ModelSpec::LeNet5(LeNet5Config {
                activation: self.activation,
                bias: self.bias,
                ..LeNet5Config::default()
            }),
        }
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            eta: self.eta,
            mu: self.mu,
            alpha: self.alpha,
            batch: self.batch,
        }
    }

    pub fn augment(&self) -> AugmentPolicy {
        AugmentPolicy {
            max_shift: self.augment_shift,
            hflip: self.hflip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper_params().validate()?;
        self.schedule.validate()?;
        match self.model_spec() {
            ModelSpec::Tree3(c) => c.validate()?,
            ModelSpec::LeNet5(c) => c.validate()?,
        }
        if self.epochs == 0 {
            return Err(Error::Plan("epochs must be positive".into()));
        }
        if self.mode == Mode::Online && self.epochs != 1 {
            return Err(Error::Plan(format!("online plans make exactly one pass (epochs = {})", self.epochs)));
        }
        if let Some(end) = self.schedule.end() {
            if self.epochs > end {
                return Err(Error::Plan(format!(
                    "the learning-rate schedule ends at epoch {end} but the plan runs {} epochs",
                    self.epochs
                )));
            }
        }
        if self.dataset_size == Some(0) {
            return Err(Error::Plan("dataset_size must be positive".into()));
        }
        if let Some(Threshold::ActiveFraction(f)) = self.threshold {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Plan(format!("active fraction must lie in (0, 1], got {f}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: TrainPlan = serde_json::from_str(s).map_err(|e| Error::Plan(format!("bad plan file: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// One-line summary of the optimizer settings.
    pub fn describe(&self) -> String {
        let sched = match &self.schedule.lr {
            crate::optim::LrSchedule::Constant { eta } => format!("constant η={eta}"),
            crate::optim::LrSchedule::Piecewise { segments } => segments
                .iter()
                .map(|s| format!("[{},{})→{}", s.start, s.end, s.eta))
                .collect::<Vec<_>>()
                .join(" "),
            crate::optim::LrSchedule::Geometric { eta0, factor, period } => {
                format!("η₀={eta0} ×{factor} every {period} epochs")
            }
        };
        let switch = self
            .schedule
            .decay_switch
            .map(|s| format!(", α→{} at epoch {}", s.epoch, s.alpha))
            .unwrap_or_default();
        format!(
            "{}: η={} μ={} α={}{} batch={} epochs={} schedule {}",
            self.model_spec().describe(),
            self.eta,
            self.mu,
            self.alpha,
            switch,
            self.batch,
            self.epochs,
            sched
        )
    }
}

struct Preset {
    name: &'static str,
    arch: Arch,
    k: usize,
    m: usize,
    activation: Activation,
    eta: f64,
    mu: f64,
    alpha: f64,
    batch: usize,
    epochs: usize,
    schedule: Schedule,
}

impl Preset {
    fn plan(self) -> TrainPlan {
        TrainPlan {
            name: self.name.into(),
            arch: self.arch,
            k: self.k,
            m: self.m,
            geometry: Geometry::Cifar,
            layout: TreeLayout::Joint,
            activation: self.activation,
            bias: true,
            eta: self.eta,
            mu: self.mu,
            alpha: self.alpha,
            batch: self.batch,
            epochs: self.epochs,
            schedule: self.schedule,
            augment_shift: 0,
            hflip: false,
            mode: Mode::Offline,
            dataset_size: None,
            seed: 1,
            pruned_bp: false,
            threshold: None,
            init: InitScheme::He,
            full_scale: false,
            expected_accuracy: None,
        }
    }
}

/// Every named preset, desk-scale and full-scale.
pub fn builtin_plans() -> Vec<TrainPlan> {
    use Activation::{Relu, Sigmoid};
    let k6m16 = Schedule::piecewise(
        &[(0, 0.075), (50, 0.05), (70, 0.01), (100, 0.005), (150, 0.001), (175, 0.0001)],
        200,
    );
    let k15m16 = Schedule::piecewise(&[(0, 0.075), (50, 0.05), (70, 0.01), (100, 0.0075), (150, 0.003)], 200);
    let offline = |name, arch, k, m, activation, eta, mu, alpha, schedule: Schedule, expected| TrainPlan {
        full_scale: true,
        expected_accuracy: Some(expected),
        ..Preset {
            name,
            arch,
            k,
            m,
            activation,
            eta,
            mu,
            alpha,
            batch: 100,
            epochs: 200,
            schedule,
        }
        .plan()
    };
    let mut plans = vec![
        offline(
            "lenet5-offline",
            Arch::LeNet5,
            0,
            0,
            Relu,
            0.1,
            0.9,
            1e-4,
            Schedule::piecewise(&[(0, 0.01), (100, 0.005), (150, 0.001)], 200),
            0.7535,
        ),
        offline(
            "tree3-k6m16-offline",
            Arch::Tree3,
            6,
            16,
            Sigmoid,
            0.075,
            0.965,
            5e-5,
            k6m16.clone().with_switch(50, 1e-5),
            0.7502,
        ),
        offline(
            "tree3-k15m16-offline",
            Arch::Tree3,
            15,
            16,
            Sigmoid,
            0.075,
            0.965,
            5e-5,
            k15m16.clone().with_switch(50, 1e-5),
            0.7670,
        ),
        TrainPlan {
            augment_shift: 4,
            hflip: true,
            ..offline(
                "tree3-k15m80-offline",
                Arch::Tree3,
                15,
                80,
                Relu,
                0.075,
                0.965,
                5e-5,
                Schedule::geometric(0.075, 0.6, 20).with_switch(50, 1e-5),
                0.7913,
            )
        },
        TrainPlan {
            augment_shift: 4,
            hflip: true,
            layout: TreeLayout::PerClass,
            ..offline(
                "tentree-k15m80-offline",
                Arch::Tree3,
                15,
                80,
                Relu,
                0.05,
                0.97,
                5e-5,
                Schedule::geometric(0.05, 0.6, 20).with_switch(50, 1e-5),
                0.815,
            )
        },
        TrainPlan {
            geometry: Geometry::Mnist,
            augment_shift: 2,
            pruned_bp: true,
            expected_accuracy: Some(0.9907),
            ..Preset {
                name: "tree3-mnist",
                arch: Arch::Tree3,
                k: 15,
                m: 16,
                activation: Relu,
                eta: 0.1,
                mu: 0.9,
                alpha: 5e-4,
                batch: 100,
                epochs: 5,
                schedule: k15m16,
            }
            .plan()
        },
        TrainPlan {
            dataset_size: Some(12_500),
            pruned_bp: true,
            ..Preset {
                name: "tree3-k6m16-desk",
                arch: Arch::Tree3,
                k: 6,
                m: 16,
                activation: Relu,
                eta: 0.02,
                mu: 0.965,
                alpha: 5e-5,
                batch: 50,
                epochs: 10,
                schedule: Schedule::constant(0.02),
            }
            .plan()
        },
    ];
    let online = [
        ("50k", 50_000, 100, (0.012, 0.96, 1e-4, 0.6051), (0.02, 5e-7, 0.6051)),
        ("25k", 25_000, 100, (0.017, 0.96, 3e-3, 0.5550), (0.03, 5e-6, 0.5550)),
        ("12k", 12_500, 50, (0.012, 0.94, 8e-3, 0.5018), (0.02, 5e-5, 0.5018)),
    ];
    for (tag, size, batch, (le, lm, la, lacc), (te, ta, tacc)) in online {
        for (name, arch, k, m, eta, mu, alpha, acc) in [
            (format!("lenet5-online-{tag}"), Arch::LeNet5, 0, 0, le, lm, la, lacc),
            (format!("tree3-online-{tag}"), Arch::Tree3, 6, 16, te, 0.965, ta, tacc),
        ] {
            plans.push(TrainPlan {
                name,
                mode: Mode::Online,
                dataset_size: Some(size),
                pruned_bp: arch == Arch::Tree3,
                expected_accuracy: Some(acc),
                ..Preset {
                    name: "",
                    arch,
                    k,
                    m,
                    activation: Relu,
                    eta,
                    mu,
                    alpha,
                    batch,
                    epochs: 1,
                    schedule: Schedule::constant(eta),
                }
                .plan()
            });
        }
    }
    plans
}

/// Looks up a preset by name.
pub fn plan_by_name(name: &str) -> Result<TrainPlan> {
    let plans = builtin_plans();
    plans.iter().find(|p| p.name == name).cloned().ok_or_else(|| Error::UnknownPlan {
        name: name.into(),
        valid: plans.iter().map(|p| p.name.clone()).collect::<Vec<_>>().join(", "),
    })
}
