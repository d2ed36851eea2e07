//! SGD with Nesterov momentum and L2 decay, and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use crate::train::plan::builtin_plans;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Learning rate η.
    pub eta: f64,
    /// Momentum constant μ.
    pub mu: f64,
    /// L2 coefficient α.
    pub alpha: f64,
    pub batch: usize,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Plan(format!("eta must be a nonnegative number, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Plan(format!("mu must lie in [0, 1), got {}", self.mu)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Plan(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if self.batch == 0 {
            return Err(Error::Plan("batch must be positive".into()));
        }
        Ok(())
    }
}

/// A constant-η stretch `[start, end)` of a piecewise schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    Constant { eta: f64 },
    Piecewise { segments: Vec<Segment> },
    /// `η₀ · factor^⌊epoch / period⌋`.
    Geometric { eta0: f64, factor: f64, period: usize },
}

/// Switches the L2 coefficient to `alpha` from `epoch` on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySwitch {
    pub epoch: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr: LrSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_switch: Option<DecaySwitch>,
}

impl Schedule {
    pub fn constant(eta: f64) -> Self {
        Schedule {
            lr: LrSchedule::Constant { eta },
            decay_switch: None,
        }
    }

    /// Piecewise schedule from `(start, η)` breakpoints ending at `end`.
    pub fn piecewise(breaks: &[(usize, f64)], end: usize) -> Self {
        let segments = breaks
            .iter()
            .enumerate()
            .map(|(i, &(start, eta))| Segment {
                start,
                end: breaks.get(i + 1).map_or(end, |b| b.0),
                eta,
            })
            .collect();
        Schedule {
            lr: LrSchedule::Piecewise { segments },
            decay_switch: None,
        }
    }

    pub fn geometric(eta0: f64, factor: f64, period: usize) -> Self {
        Schedule {
            lr: LrSchedule::Geometric { eta0, factor, period },
            decay_switch: None,
        }
    }

    pub fn with_switch(mut self, epoch: usize, alpha: f64) -> Self {
        self.decay_switch = Some(DecaySwitch { epoch, alpha });
        self
    }

    /// First epoch not covered, if the schedule is bounded.
    pub fn end(&self) -> Option<usize> {
        match &self.lr {
            LrSchedule::Piecewise { segments } => segments.last().map(|s| s.end),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.lr {
            LrSchedule::Constant { eta } if !(*eta >= 0.0) => {
                Err(Error::Plan(format!("constant eta must be nonnegative, got {eta}")))
            }
            LrSchedule::Piecewise { segments } => {
                let mut next = 0;
                for s in segments {
                    if s.start != next || s.end <= s.start || !(s.eta >= 0.0) {
                        return Err(Error::Plan(format!(
                            "piecewise segments must tile [0, end) in order; bad segment {s:?}"
                        )));
                    }
                    next = s.end;
                }
                if segments.is_empty() {
                    return Err(Error::Plan("piecewise schedule has no segments".into()));
                }
                Ok(())
            }
            LrSchedule::Geometric { eta0, factor, period } => {
                if !(*factor > 0.0 && *factor < 1.0) || *period == 0 || !(*eta0 >= 0.0) {
                    return Err(Error::Plan(format!(
                        "geometric schedule needs eta0 ≥ 0, factor in (0, 1), period > 0 (got {eta0}, {factor}, {period})"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Learning rate for a zero-based epoch.
pub fn schedule_eta(schedule: &Schedule, epoch: usize) -> Result<f64> {
    match &schedule.lr {
        LrSchedule::Constant { eta } => Ok(*eta),
        LrSchedule::Piecewise { segments } => segments
            .iter()
            .find(|s| s.start <= epoch && epoch < s.end)
            .map(|s| s.eta)
            .ok_or(Error::Schedule {
                epoch,
                end: schedule.end().unwrap_or(0),
            }),
        LrSchedule::Geometric { eta0, factor, period } => Ok(eta0 * factor.powi((epoch / period) as i32)),
    }
}

/// L2 coefficient for a zero-based epoch.
pub fn schedule_alpha(schedule: &Schedule, epoch: usize, base_alpha: f64) -> f64 {
    match schedule.decay_switch {
        Some(s) if epoch >= s.epoch => s.alpha,
        _ => base_alpha,
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        OptimizerState {
            velocity: params.iter().map(|t| Tensor::zeros_like(t)).collect(),
        }
    }
}

/// One Nesterov step, in the usual deep-learning form:
///
/// ```text
/// g̃ = g + α·w
/// v ← μ·v + g̃
/// w ← w − η·(g̃ + μ·v)
/// ```
///
/// `grads` are mini-batch means.
pub fn sgd_nesterov_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    hp: &HyperParams,
) -> Result<()> {
    const OP: &str = "sgd_nesterov_step";
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(OP, "tensor count", params.len(), grads.len().min(state.velocity.len())));
    }
    let (eta, mu, alpha) = (T::of(hp.eta), T::of(hp.mu), T::of(hp.alpha));
    for ((w, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if w.shape() != g.shape() || w.shape() != v.shape() {
            return Err(Error::shape(OP, "tensor length", w.len(), g.len()));
        }
        for ((w, &g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let gt = g + alpha * *w;
            *v = mu * *v + gt;
            *w -= eta * (gt + mu * *v);
        }
    }
    Ok(())
}
