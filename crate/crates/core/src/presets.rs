//! Named manipulation settings for a 50-step grid.
//!
//! `*-default` use the single interpolation factors of the main comparison
//! (IDI 0.7, CEI 1, CAM 1, G β = −0.3, PNI 1) over a 20-step window opening at
//! the first denoising step. `*-local` and `*-global` sit inside the
//! recommended `t_max` / `T_M` ranges for local and global edits.

use crate::error::{Error, Result};
use crate::manipulations::{ManipulationConfig, ManipulationKind};
use crate::schedule::{ScheduleSpec, DEFAULT_SAMPLE_STEPS};

struct Preset {
    name: &'static str,
    kind: ManipulationKind,
    t_max: usize,
    span: usize,
    amplitude: f64,
    beta: Option<f64>,
}

const fn preset(
    name: &'static str,
    kind: ManipulationKind,
    t_max: usize,
    span: usize,
    amplitude: f64,
    beta: Option<f64>,
) -> Preset {
    Preset {
        name,
        kind,
        t_max,
        span,
        amplitude,
        beta,
    }
}

use ManipulationKind::{Cam, Cei, Idi, Pni, G};

const PRESETS: &[Preset] = &[
    preset("idi-default", Idi, 50, 20, 0.7, None),
    preset("cei-default", Cei, 50, 20, 1.0, None),
    preset("cam-default", Cam, 50, 20, 1.0, None),
    preset("g-default", G, 50, 50, 1.0, Some(-0.3)),
    preset("pni-default", Pni, 50, 20, 1.0, None),
    // local edits
    preset("idi-local", Idi, 45, 18, 0.7, None),
    preset("cei-local", Cei, 50, 20, 1.0, None),
    preset("cam-local", Cam, 50, 40, 1.0, None),
    preset("g-local", G, 50, 50, 1.0, Some(-0.65)),
    preset("pni-local", Pni, 47, 20, 1.0, None),
    // global edits
    preset("idi-global", Idi, 45, 12, 0.7, None),
    preset("cei-global", Cei, 50, 22, 1.0, None),
    preset("cam-global", Cam, 50, 40, 1.0, None),
    preset("g-global", G, 50, 50, 1.0, Some(-0.15)),
    preset("pni-global", Pni, 46, 20, 1.0, None),
];

pub const DEFAULT_CAM_HOOK: &str = "replay";

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.name)
}

/// Resolves a named preset on a grid with `total` sampling steps.
pub fn manipulation_preset(name: &str, total: usize) -> Result<ManipulationConfig> {
    let p = PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown manipulation preset `{name}`")))?;
    if total != DEFAULT_SAMPLE_STEPS {
        return Err(Error::Config(format!(
            "preset `{name}` is defined for {DEFAULT_SAMPLE_STEPS} sampling steps, not {total}"
        )));
    }
    let schedule = ScheduleSpec::constant(p.t_max - p.span, p.t_max, total, p.amplitude)?;
    let mut cfg = ManipulationConfig::new(p.kind, schedule);
    if let Some(beta) = p.beta {
        cfg = cfg.with_beta(beta);
    }
    if p.kind == Cam {
        cfg = cfg.with_cam_hook(DEFAULT_CAM_HOOK);
    }
    Ok(cfg)
}
