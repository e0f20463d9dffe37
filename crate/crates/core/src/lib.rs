//! Deterministic diffusion sampling-path manipulation.
//!
//! DDIM sampling and inversion over a noise-prediction interface, seven
//! path-manipulation operators driven by time-dependent weight schedules,
//! and a sweep harness that scores edits. The bundled denoiser is the exact
//! posterior-mean predictor of a conditional Gaussian mixture, so every
//! operator can be checked against closed-form expectations.

pub mod cam;
pub mod denoiser;
pub mod error;
pub mod manipulations;
pub mod metrics;
pub mod presets;
pub mod rng;
pub mod sampler;
pub mod scenario;
pub mod schedule;
pub mod vector;

pub use cam::{CamContext, CamHook, HookRegistry};
pub use denoiser::{
    ConditionBook, ConditionEmbedding, ConditionInput, Denoiser, GmmComponent, GmmDenoiser, Latent,
    NoisePrediction,
};
pub use error::{DenoiserError, Error, Result};
pub use manipulations::{
    apply_mask, lerp, prompt_switch, run_edit, BinaryMask, EditResult, ManipulationConfig,
    ManipulationKind,
};
pub use metrics::{
    inversion_report, run_sweep, run_sweep_with, score_edit, EditMetrics, InversionRow, SweepAxes,
    SweepRow, SweepTable,
};
pub use presets::{manipulation_preset, preset_names};
pub use rng::SeedStream;
pub use sampler::{
    cfg_combine, ddim_invert, ddim_step, f_theta, generate, null_text_invert, Direction, Guidance,
    NullEmbeddings, NullTextInversion, NullTextOptions, PathRecord, Sampler,
};
pub use scenario::Scenario;
pub use schedule::{AlphaSchedule, ScheduleKind, ScheduleSpec, TimestepGrid};
