//! Client delays, round delay spread and the delay-adjusted learning rate.
//!
//! Two delay notions are kept apart. Staleness is an integer number of rounds
//! and decides which global snapshot a client starts from. Execution delay is
//! a real number of seconds; its per-round spread feeds the learning-rate
//! schedule and the wall-clock/energy metrics.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AflError, Result};
use crate::seed;

pub const SCALE_LOW: f64 = 0.5;
pub const SCALE_HIGH: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayMode {
    /// Delays drawn from the seeded model; no clock is read.
    Simulated,
    /// Delays are the measured elapsed time of each local run.
    Wallclock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub mode: DelayMode,
    /// Mean execution time in seconds before per-client scaling.
    pub base_mean: f64,
    /// Half-width of the uniform jitter in seconds.
    pub jitter: f64,
    pub staleness_max: usize,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            mode: DelayMode::Simulated,
            base_mean: 1.0,
            jitter: 0.2,
            staleness_max: 2,
        }
    }
}

impl DelayModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_mean >= 0.0 && self.base_mean.is_finite()) {
            return Err(AflError::InvalidArgument(format!(
                "delay base_mean must be >= 0, got {}",
                self.base_mean
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(AflError::InvalidArgument(format!(
                "delay jitter must be >= 0, got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Per-client hardware speed factors `scale_c ~ U[0.5, 1.5]`, drawn once per
/// experiment.
pub fn client_scales(clients: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::stream(seed, "client-scales", &[]);
    (0..clients)
        .map(|_| rng.random_range(SCALE_LOW..SCALE_HIGH))
        .collect()
}

/// `max(0, base_mean * scale + U[-jitter, jitter])`.
pub fn sample_delay<R: Rng + ?Sized>(model: &DelayModel, scale: f64, rng: &mut R) -> f64 {
    let jitter = if model.jitter > 0.0 {
        rng.random_range(-model.jitter..=model.jitter)
    } else {
        0.0
    };
    (model.base_mean * scale + jitter).max(0.0)
}

/// Staleness in rounds, uniform on `{0, .., min(tau_max, round)}`.
pub fn sample_staleness<R: Rng + ?Sized>(model: &DelayModel, round: usize, rng: &mut R) -> usize {
    let hi = model.staleness_max.min(round);
    if hi == 0 {
        0
    } else {
        rng.random_range(0..=hi)
    }
}

/// `tau_t = max(delays) - min(delays)`.
pub fn round_delay_spread(delays: &BTreeMap<usize, f64>) -> Result<f64> {
    let mut values = delays.values().copied();
    let first = values
        .next()
        .ok_or_else(|| AflError::InvalidArgument("no delays recorded this round".into()))?;
    let (lo, hi) = values.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(hi - lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `gamma0 / (sqrt(t + 1) * (1 + alpha * tau_t))`
    Adaptive,
    /// `gamma0` every round; used by the convergence-bound checks.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub gamma0: f64,
    pub alpha: f64,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn new(gamma0: f64, alpha: f64) -> Result<Self> {
        let s = Self {
            gamma0,
            alpha,
            kind: ScheduleKind::Adaptive,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(gamma0: f64) -> Result<Self> {
        let s = Self {
            gamma0,
            alpha: 0.0,
            kind: ScheduleKind::Constant,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(AflError::InvalidArgument(format!(
                "gamma0 must be > 0, got {}",
                self.gamma0
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(AflError::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn rate(&self, round: usize, tau_t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Adaptive => delay_adjusted_lr(self, round, tau_t),
            ScheduleKind::Constant => self.gamma0,
        }
    }
}

/// `gamma_t = gamma0 / (sqrt(t + 1) * (1 + alpha * tau_t))`
pub fn delay_adjusted_lr(s: &LrSchedule, round: usize, tau_t: f64) -> f64 {
    s.gamma0 / (((round + 1) as f64).sqrt() * (1.0 + s.alpha * tau_t))
}
