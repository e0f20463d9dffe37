//! Sampling-path manipulations and the edit loop that applies them under a
//! weight schedule.
//!
//! Every operator starts the edited path at the shared `x_T` and walks the
//! grid from `T` down to 1. At steps where the schedule weight is zero the
//! edited latent is denoised with `c_B` alone.

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::cam::{CamContext, HookRegistry};
use crate::denoiser::{ConditionEmbedding, Denoiser, Latent, NoisePrediction};
use crate::error::{Error, Result};
use crate::sampler::{Direction, PathRecord, Sampler};
use crate::schedule::{AlphaSchedule, ScheduleKind, ScheduleSpec, TimestepGrid};

/// `w·a + (1 − w)·b`; the weight always belongs to the first (path-A) argument.
pub fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| w * x + (1.0 - w) * y)
        .collect()
}

/// `m ⊙ a + (1 − m) ⊙ b`.
pub fn apply_mask(a: &[f64], b: &[f64], mask: &BinaryMask) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), mask.len());
    a.iter()
        .zip(b)
        .zip(mask.values())
        .map(|((x, y), m)| m * x + (1.0 - m) * y)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(Vec<f64>);

impl BinaryMask {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Config(
                "mask entries must be exactly 0 or 1 (soft masks are not supported)".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn ones(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ManipulationKind {
    /// Intermediate latent interpolation.
    Idi,
    /// Intermediate latent masking.
    Idm,
    /// Condition embedding interpolation.
    Cei,
    /// Cross-attention manipulation through a hook.
    Cam,
    /// Guidance by the source condition.
    G,
    /// Predicted noise interpolation.
    Pni,
    /// Predicted noise masking.
    Pnm,
}

impl ManipulationKind {
    pub const ALL: [ManipulationKind; 7] = [
        ManipulationKind::Idi,
        ManipulationKind::Idm,
        ManipulationKind::Cei,
        ManipulationKind::Cam,
        ManipulationKind::G,
        ManipulationKind::Pni,
        ManipulationKind::Pnm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ManipulationKind::Idi => "IDI",
            ManipulationKind::Idm => "IDM",
            ManipulationKind::Cei => "CEI",
            ManipulationKind::Cam => "CAM",
            ManipulationKind::G => "G",
            ManipulationKind::Pni => "PNI",
            ManipulationKind::Pnm => "PNM",
        }
    }

    pub fn is_masked(self) -> bool {
        matches!(self, ManipulationKind::Idm | ManipulationKind::Pnm)
    }
}

impl fmt::Display for ManipulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ManipulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ManipulationKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown manipulation kind `{s}`")))
    }
}

/// One point of the design space: operator, schedule and its operator-specific inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulationConfig {
    pub kind: ManipulationKind,
    pub schedule: ScheduleSpec,
    pub beta: Option<f64>,
    pub mask: Option<BinaryMask>,
    pub cam_hook: Option<String>,
}

impl ManipulationConfig {
    pub fn new(kind: ManipulationKind, schedule: ScheduleSpec) -> Self {
        Self {
            kind,
            schedule,
            beta: None,
            mask: None,
            cam_hook: None,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_mask(mut self, mask: BinaryMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn with_cam_hook(mut self, name: impl Into<String>) -> Self {
        self.cam_hook = Some(name.into());
        self
    }

    /// Checks the per-kind field rules against a grid and latent dimension.
    /// Returns warnings for permitted but unusual settings.
    pub fn validate(&self, sample_steps: usize, dim: usize) -> Result<Vec<String>> {
        let kind = self.kind;
        if self.schedule.total() != sample_steps {
            return Err(Error::Config(format!(
                "schedule is defined over {} steps but the grid has {sample_steps}",
                self.schedule.total()
            )));
        }
        let mut warnings = Vec::new();
        match (kind, self.beta) {
            (ManipulationKind::G, None) => {
                return Err(Error::Config("kind G requires beta".into()))
            }
            (ManipulationKind::G, Some(beta)) => {
                if !beta.is_finite() {
                    return Err(Error::Config("beta must be finite".into()));
                }
                if !(-1.0..=0.0).contains(&beta) {
                    warnings.push(format!(
                        "beta {beta} lies outside [-1, 0]; guidance extrapolates beyond interpolation"
                    ));
                }
            }
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "beta is only valid for kind G, not {kind}"
                )))
            }
            (_, None) => {}
        }
        match (kind.is_masked(), &self.mask) {
            (true, None) => return Err(Error::Config(format!("kind {kind} requires a mask"))),
            (true, Some(mask)) => {
                if mask.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "mask",
                        expected: dim,
                        found: mask.len(),
                    });
                }
                if self.schedule.kind() != ScheduleKind::Constant {
                    return Err(Error::Config(format!(
                        "kind {kind} uses a constant window; got a {} schedule",
                        self.schedule.kind()
                    )));
                }
            }
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "a mask is only valid for IDM/PNM, not {kind}"
                )))
            }
            (false, None) => {}
        }
        match (kind, &self.cam_hook) {
            (ManipulationKind::Cam, None) => {
                return Err(Error::Config("kind CAM requires cam_hook".into()))
            }
            (ManipulationKind::Cam, Some(_)) | (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "cam_hook is only valid for CAM, not {kind}"
                )))
            }
        }
        Ok(warnings)
    }
}

/// An edited trajectory with its source path and the weights applied per step.
#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    /// The edited path. Its noises are the effective ε that replays each step.
    pub path: PathRecord,
    pub path_a: PathRecord,
    pub config: ManipulationConfig,
    /// ω_t per grid position (generation order); zero outside the support.
    pub weights: Vec<f64>,
    pub warnings: Vec<String>,
}

/// The ε that moves `from` to `to` under a DDIM update at `(ᾱ_t, ᾱ_prev)`.
fn effective_noise(from: &[f64], to: &[f64], alpha_t: f64, alpha_prev: f64) -> NoisePrediction {
    let carry = (alpha_prev / alpha_t).sqrt();
    let coeff = (1.0 - alpha_prev).sqrt() - carry * (1.0 - alpha_t).sqrt();
    NoisePrediction(
        from.iter()
            .zip(to)
            .map(|(f, t)| (t - carry * f) / coeff)
            .collect(),
    )
}

impl Sampler<'_> {
    pub fn run_edit(
        &self,
        x_t: &Latent,
        c_a: &ConditionEmbedding,
        c_b: &ConditionEmbedding,
        config: &ManipulationConfig,
        hooks: &HookRegistry,
    ) -> Result<EditResult> {
        self.check_latent(x_t)?;
        self.check_condition(c_a)?;
        self.check_condition(c_b)?;
        let n = self.grid().len();
        let warnings = config.validate(n, x_t.len())?;
        for w in &warnings {
            warn!("{w}");
        }
        let hook = match (&config.kind, &config.cam_hook) {
            (ManipulationKind::Cam, Some(name)) => {
                let hook = hooks.get(name)?;
                if hook.requires_attention() && !self.denoiser().supports_attention() {
                    return Err(Error::Config(format!(
                        "cam hook `{name}` needs attention introspection, which this denoiser lacks"
                    )));
                }
                Some(hook)
            }
            _ => None,
        };

        let path_a = self.generate(x_t, c_a, None)?;
        let schedule = &config.schedule;
        let mut latents = Vec::with_capacity(n + 1);
        let mut noises = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        latents.push(x_t.clone());

        for i in 0..n {
            let w = schedule.omega(self.grid().sampling_index(i));
            weights.push(w);
            let x = &latents[i];
            let (eps, next) = if w == 0.0 {
                let eps = self.predict(x, c_b, i)?;
                let next = self.step(x, &eps, i)?;
                (eps, next)
            } else {
                self.edit_step(x, i, w, c_a, c_b, config, &path_a, hook.as_deref())?
            };
            noises.push(eps);
            latents.push(next);
        }

        Ok(EditResult {
            path: PathRecord {
                grid: self.grid().clone(),
                latents,
                noises,
                condition: c_b.clone(),
                direction: Direction::Generation,
            },
            path_a,
            config: config.clone(),
            weights,
            warnings,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn edit_step(
        &self,
        x: &Latent,
        i: usize,
        w: f64,
        c_a: &ConditionEmbedding,
        c_b: &ConditionEmbedding,
        config: &ManipulationConfig,
        path_a: &PathRecord,
        hook: Option<&dyn crate::cam::CamHook>,
    ) -> Result<(NoisePrediction, Latent)> {
        let stepped = |eps: NoisePrediction| -> Result<(NoisePrediction, Latent)> {
            let next = self.step(x, &eps, i)?;
            Ok((eps, next))
        };
        let replaced = |next: Vec<f64>| -> (NoisePrediction, Latent) {
            let (a_t, a_prev) = self.grid().alphas(self.schedule(), i);
            (effective_noise(x, &next, a_t, a_prev), Latent(next))
        };
        match config.kind {
            ManipulationKind::Pni => {
                let eps_b = self.predict(x, c_b, i)?;
                stepped(NoisePrediction(lerp(&path_a.noises[i], &eps_b, w)))
            }
            ManipulationKind::Pnm => {
                let eps_b = self.predict(x, c_b, i)?;
                let mask = config.mask.as_ref().expect("validated");
                stepped(NoisePrediction(apply_mask(&path_a.noises[i], &eps_b, mask)))
            }
            ManipulationKind::Cei => {
                let c_star = ConditionEmbedding::new(lerp(c_a.values(), c_b.values(), w));
                stepped(self.predict(x, &c_star, i)?)
            }
            ManipulationKind::Idi => {
                let eps_b = self.predict(x, c_b, i)?;
                let x_b = self.step(x, &eps_b, i)?;
                Ok(replaced(lerp(&path_a.latents[i + 1], &x_b, w)))
            }
            ManipulationKind::Idm => {
                let eps_b = self.predict(x, c_b, i)?;
                let x_b = self.step(x, &eps_b, i)?;
                let mask = config.mask.as_ref().expect("validated");
                Ok(replaced(apply_mask(&path_a.latents[i + 1], &x_b, mask)))
            }
            ManipulationKind::G => {
                let beta = config.beta.expect("validated");
                let eps_a = self.predict(x, c_a, i)?;
                let eps_b = self.predict(x, c_b, i)?;
                stepped(NoisePrediction(
                    eps_a
                        .iter()
                        .zip(eps_b.iter())
                        .map(|(a, b)| a + beta * (a - b))
                        .collect(),
                ))
            }
            ManipulationKind::Cam => {
                let hook = hook.expect("validated");
                let latent_a = &path_a.latents[i];
                let ctx = CamContext {
                    sampler: self,
                    latent_a,
                    noise_a: &path_a.noises[i],
                    condition_a: c_a,
                    condition_b: c_b,
                    position: i,
                };
                let eps = hook.apply(&ctx)?;
                let next = self.step(latent_a, &eps, i)?;
                Ok(replaced(next.into_inner()))
            }
        }
    }

    /// Denoise the first `k` steps under `c_A` and the rest under `c_B`.
    pub fn prompt_switch(
        &self,
        x_t: &Latent,
        c_a: &ConditionEmbedding,
        c_b: &ConditionEmbedding,
        k: usize,
    ) -> Result<PathRecord> {
        let n = self.grid().len();
        if k > n {
            return Err(Error::param(format!(
                "switch step {k} exceeds the {n}-step grid"
            )));
        }
        self.check_condition(c_a)?;
        self.check_condition(c_b)?;
        self.generate_with(x_t, |i| if i < k { c_a.clone() } else { c_b.clone() }, c_b)
    }
}

/// Applies `config` to the generation from `x_T`, editing `c_A` towards `c_B`.
#[allow(clippy::too_many_arguments)]
pub fn run_edit(
    denoiser: &dyn Denoiser,
    x_t: &Latent,
    c_a: &ConditionEmbedding,
    c_b: &ConditionEmbedding,
    config: &ManipulationConfig,
    grid: &TimestepGrid,
    schedule: &AlphaSchedule,
) -> Result<EditResult> {
    Sampler::new(denoiser, grid, schedule)?.run_edit(
        x_t,
        c_a,
        c_b,
        config,
        &HookRegistry::default(),
    )
}

pub fn prompt_switch(
    denoiser: &dyn Denoiser,
    x_t: &Latent,
    c_a: &ConditionEmbedding,
    c_b: &ConditionEmbedding,
    k: usize,
    grid: &TimestepGrid,
    schedule: &AlphaSchedule,
) -> Result<PathRecord> {
    Sampler::new(denoiser, grid, schedule)?.prompt_switch(x_t, c_a, c_b, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lerp_examples() {
        assert_eq!(lerp(&[1.0, 2.0], &[5.0, 6.0], 1.0), vec![1.0, 2.0]);
        assert_eq!(lerp(&[1.0, 2.0], &[5.0, 6.0], 0.0), vec![5.0, 6.0]);
        assert_eq!(lerp(&[2.0, 0.0], &[0.0, 2.0], 0.25), vec![0.5, 1.5]);
    }

    #[test]
    fn mask_examples() {
        let a = [1.0, 1.0];
        let b = [3.0, 3.0];
        assert_eq!(apply_mask(&a, &b, &BinaryMask::ones(2)), a.to_vec());
        assert_eq!(apply_mask(&a, &b, &BinaryMask::zeros(2)), b.to_vec());
        let m = BinaryMask::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(apply_mask(&a, &b, &m), vec![1.0, 3.0]);
        assert!(BinaryMask::new(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ManipulationKind::ALL {
            assert_eq!(k.name().parse::<ManipulationKind>().unwrap(), k);
        }
        assert_eq!(
            "pni".parse::<ManipulationKind>().unwrap(),
            ManipulationKind::Pni
        );
        assert!("XYZ".parse::<ManipulationKind>().is_err());
    }

    fn window() -> ScheduleSpec {
        ScheduleSpec::constant(30, 50, 50, 1.0).unwrap()
    }

    #[test]
    fn field_requirements() {
        use ManipulationKind::*;
        assert!(ManipulationConfig::new(G, window())
            .validate(50, 2)
            .is_err());
        assert!(ManipulationConfig::new(Pni, window())
            .with_beta(0.1)
            .validate(50, 2)
            .is_err());
        assert!(ManipulationConfig::new(Pnm, window())
            .validate(50, 2)
            .is_err());
        assert!(ManipulationConfig::new(Pnm, window())
            .with_mask(BinaryMask::ones(3))
            .validate(50, 2)
            .is_err());
        assert!(ManipulationConfig::new(Idi, window())
            .with_mask(BinaryMask::ones(2))
            .validate(50, 2)
            .is_err());
        assert!(ManipulationConfig::new(Cam, window())
            .validate(50, 2)
            .is_err());
        assert!(ManipulationConfig::new(Cei, window())
            .with_cam_hook("replay")
            .validate(50, 2)
            .is_err());
        assert!(ManipulationConfig::new(Pni, window())
            .validate(40, 2)
            .is_err());
        let cos = ScheduleSpec::new(ScheduleKind::Cosine, 30, 50, 50, 1.0).unwrap();
        assert!(ManipulationConfig::new(Idm, cos)
            .with_mask(BinaryMask::ones(2))
            .validate(50, 2)
            .is_err());
        assert!(ManipulationConfig::new(Idm, window())
            .with_mask(BinaryMask::ones(2))
            .validate(50, 2)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn guidance_extrapolation_warns() {
        let cfg = ManipulationConfig::new(ManipulationKind::G, window()).with_beta(0.5);
        assert_eq!(cfg.validate(50, 2).unwrap().len(), 1);
        let cfg = ManipulationConfig::new(ManipulationKind::G, window()).with_beta(-0.3);
        assert!(cfg.validate(50, 2).unwrap().is_empty());
    }

    #[test]
    fn effective_noise_replays_step() {
        let x = [0.4, -0.8];
        let eps = [1.2, 0.3];
        let (a_t, a_prev) = (0.3, 0.55);
        let next = crate::sampler::ddim_step(&x, &eps, a_t, a_prev).unwrap();
        let back = effective_noise(&x, &next, a_t, a_prev);
        for (e, b) in eps.iter().zip(back.iter()) {
            assert!((e - b).abs() < 1e-12);
        }
    }
}
