//! Noise schedule, DDIM timestep grid and manipulation-weight schedules.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;
pub const DEFAULT_SAMPLE_STEPS: usize = 50;

/// Cumulative signal factors `ᾱ_0 … ᾱ_T` with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSchedule {
    alpha_bar: Vec<f64>,
}

impl AlphaSchedule {
    /// Linearly spaced betas, `ᾱ_i = ∏_{j ≤ i} (1 − β_j)`.
    pub fn linear_beta(train_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if train_steps == 0 {
            return Err(Error::param("train_steps must be at least 1"));
        }
        if !(0.0..1.0).contains(&beta_min) || !(beta_min..1.0).contains(&beta_max) {
            return Err(Error::param(format!(
                "beta range must satisfy 0 <= beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(train_steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for j in 0..train_steps {
            let beta = if train_steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * j as f64 / (train_steps - 1) as f64
            };
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Ok(Self { alpha_bar })
    }

    /// Validates an explicit table: `ᾱ_0 = 1`, entries in (0, 1], non-increasing.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::param("alpha_bar needs at least two entries"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::param("alpha_bar[0] must be 1"));
        }
        if alpha_bar.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::param("alpha_bar entries must lie in (0, 1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::param("alpha_bar must be non-increasing"));
        }
        Ok(Self { alpha_bar })
    }

    pub fn train_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    /// # Panics
    /// If `index > train_steps()`.
    pub fn alpha_bar(&self, index: usize) -> f64 {
        self.alpha_bar[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha_bar
    }
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self::linear_beta(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)
            .expect("default schedule is valid")
    }
}

/// Descending training-step indices visited by DDIM. Step `i` moves from
/// `steps[i]` to `steps[i + 1]`, and the last step targets index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepGrid {
    train_steps: usize,
    steps: Vec<usize>,
}

impl TimestepGrid {
    pub fn new(train_steps: usize, sample_steps: usize) -> Result<Self> {
        if sample_steps == 0 || sample_steps > train_steps {
            return Err(Error::param(format!(
                "sample steps must lie in [1, {train_steps}], got {sample_steps}"
            )));
        }
        let steps = (0..sample_steps)
            .map(|i| train_steps - i * train_steps / sample_steps)
            .collect();
        Ok(Self { train_steps, steps })
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// Training index reached after step `i` (0 for the final step).
    pub fn target(&self, i: usize) -> usize {
        self.steps.get(i + 1).copied().unwrap_or(0)
    }

    /// Sampling-step index `t ∈ {T, …, 1}` of grid position `i`.
    pub fn sampling_index(&self, i: usize) -> usize {
        self.steps.len() - i
    }

    /// `(ᾱ_t, ᾱ_prev)` for grid position `i`.
    pub fn alphas(&self, schedule: &AlphaSchedule, i: usize) -> (f64, f64) {
        (
            schedule.alpha_bar(self.steps[i]),
            schedule.alpha_bar(self.target(i)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScheduleKind {
    Constant,
    Linear,
    Cosine,
    Exponential,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] = [
        ScheduleKind::Constant,
        ScheduleKind::Linear,
        ScheduleKind::Cosine,
        ScheduleKind::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Exponential => "exponential",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" | "const" => Ok(ScheduleKind::Constant),
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" | "cos" => Ok(ScheduleKind::Cosine),
            "exponential" | "exp" => Ok(ScheduleKind::Exponential),
            other => Err(Error::param(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// A manipulation-weight schedule over sampling-step indices `0..=total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    kind: ScheduleKind,
    t_min: usize,
    t_max: usize,
    total: usize,
    amplitude: f64,
}

impl ScheduleSpec {
    pub fn new(
        kind: ScheduleKind,
        t_min: usize,
        t_max: usize,
        total: usize,
        amplitude: f64,
    ) -> Result<Self> {
        if t_min > t_max || t_max > total {
            return Err(Error::param(format!(
                "schedule window must satisfy 0 <= t_min <= t_max <= T, got [{t_min}, {t_max}] with T = {total}"
            )));
        }
        if !(0.0..=1.0).contains(&amplitude) {
            return Err(Error::param(format!(
                "schedule amplitude must lie in [0, 1], got {amplitude}"
            )));
        }
        if kind != ScheduleKind::Constant {
            if t_max != total {
                return Err(Error::param(format!(
                    "{kind} schedules require t_max = T ({total}), got {t_max}"
                )));
            }
            if t_min == total {
                return Err(Error::param(format!(
                    "{kind} schedules require t_min < T ({total})"
                )));
            }
        }
        Ok(Self {
            kind,
            t_min,
            t_max,
            total,
            amplitude,
        })
    }

    /// Constant weight `amplitude` over `[t_min, t_max]`.
    pub fn constant(t_min: usize, t_max: usize, total: usize, amplitude: f64) -> Result<Self> {
        Self::new(ScheduleKind::Constant, t_min, t_max, total, amplitude)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn t_min(&self) -> usize {
        self.t_min
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Window length `T_M = t_max − t_min`.
    pub fn span(&self) -> usize {
        self.t_max - self.t_min
    }

    pub fn contains(&self, t: usize) -> bool {
        self.t_min <= t && t <= self.t_max
    }

    /// Weight at sampling step `t`; zero outside the support (including `t > T`).
    pub fn omega(&self, t: usize) -> f64 {
        if !self.contains(t) {
            return 0.0;
        }
        let shape = match self.kind {
            ScheduleKind::Constant => 1.0,
            kind => {
                let denom = (self.total - self.t_min) as f64;
                match kind {
                    ScheduleKind::Linear => (t - self.t_min) as f64 / denom,
                    ScheduleKind::Cosine => (FRAC_PI_2 * (self.total - t) as f64 / denom).cos(),
                    ScheduleKind::Exponential => (-5.0 * (self.total - t) as f64 / denom).exp(),
                    ScheduleKind::Constant => unreachable!(),
                }
            }
        };
        self.amplitude * shape
    }
}
