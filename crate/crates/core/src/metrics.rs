//! Edit scores, parameter sweeps and inversion-quality reports.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::cam::HookRegistry;
use crate::denoiser::{ConditionEmbedding, Denoiser, GmmDenoiser, Latent};
use crate::error::{Error, Result};
use crate::manipulations::{EditResult, ManipulationConfig, ManipulationKind};
use crate::rng::SeedStream;
use crate::sampler::{PathRecord, Sampler};
use crate::scenario::{streams, Scenario};
use crate::schedule::{ScheduleKind, ScheduleSpec};
use crate::vector;

/// Endpoint-level comparison of an edit against its two reference paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditMetrics {
    /// `‖x*_0 − x^A_0‖`.
    pub layout_preservation: f64,
    /// `−log p(x*_0 | c_B)` under the clean-data mixture. Can be negative
    /// for concentrated mixtures.
    pub semantic_alignment: f64,
    /// `‖x^A_0 − x^B_0‖`.
    pub ab_gap: f64,
}

pub fn score_edit(
    result: &EditResult,
    path_b: &PathRecord,
    model: &GmmDenoiser,
    c_b: &ConditionEmbedding,
) -> Result<EditMetrics> {
    if result.path.grid != path_b.grid || result.path_a.grid != path_b.grid {
        return Err(Error::param(
            "edited and reference paths use different grids",
        ));
    }
    let edited = result.path.endpoint();
    let a = result.path_a.endpoint();
    let b = path_b.endpoint();
    if edited.len() != b.len() || a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "path endpoint",
            expected: b.len(),
            found: edited.len(),
        });
    }
    let log_density = model
        .log_density(edited, c_b)
        .map_err(|source| Error::Denoiser { step: 0, source })?;
    Ok(EditMetrics {
        layout_preservation: vector::distance(edited, a),
        semantic_alignment: -log_density,
        ab_gap: vector::distance(a, b),
    })
}

/// Cartesian grid of design-space points. `t_min = t_max − span`.
/// `betas` is only iterated for kind G.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub kinds: Vec<ManipulationKind>,
    pub schedules: Vec<ScheduleKind>,
    pub t_max: Vec<usize>,
    pub spans: Vec<usize>,
    pub weights: Vec<f64>,
    pub betas: Vec<f64>,
}

impl SweepAxes {
    /// `t_max ∈ {50, 48, 46, 44, 42}` × `T_M ∈ {5, …, 25}` under a constant
    /// unit schedule.
    pub fn layout_grid(kind: ManipulationKind) -> Self {
        Self {
            kinds: vec![kind],
            schedules: vec![ScheduleKind::Constant],
            t_max: vec![50, 48, 46, 44, 42],
            spans: vec![5, 10, 15, 20, 25],
            weights: vec![1.0],
            betas: vec![-0.3],
        }
    }

    fn points(&self, total: usize) -> Result<Vec<(ManipulationKind, ScheduleSpec, Option<f64>)>> {
        let mut points = Vec::new();
        for &kind in &self.kinds {
            for &sk in &self.schedules {
                for &t_max in &self.t_max {
                    for &span in &self.spans {
                        if span > t_max {
                            return Err(Error::param(format!(
                                "window length {span} exceeds t_max {t_max}"
                            )));
                        }
                        for &w in &self.weights {
                            let spec = ScheduleSpec::new(sk, t_max - span, t_max, total, w)?;
                            if kind == ManipulationKind::G {
                                for &b in &self.betas {
                                    points.push((kind, spec, Some(b)));
                                }
                            } else {
                                points.push((kind, spec, None));
                            }
                        }
                    }
                }
            }
        }
        if points.is_empty() {
            return Err(Error::param("sweep axes describe an empty grid"));
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kind: ManipulationKind,
    pub schedule: ScheduleKind,
    pub t_max: usize,
    pub t_min: usize,
    pub weight: f64,
    pub beta: Option<f64>,
    pub seed: u64,
    pub metrics: EditMetrics,
    pub endpoint: Latent,
}

impl SweepRow {
    fn order(&self, other: &Self) -> Ordering {
        self.kind
            .cmp(&other.kind)
            .then(self.schedule.cmp(&other.schedule))
            .then(self.t_max.cmp(&other.t_max))
            .then(self.t_min.cmp(&other.t_min))
            .then(self.weight.total_cmp(&other.weight))
            .then(
                self.beta
                    .unwrap_or(f64::NEG_INFINITY)
                    .total_cmp(&other.beta.unwrap_or(f64::NEG_INFINITY)),
            )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// Endpoints of the unedited source and target paths.
    pub endpoint_a: Latent,
    pub endpoint_b: Latent,
}

impl ManipulationConfig {
    /// Fills mask and hook from the scenario for the kinds that need them.
    pub fn for_scenario(
        kind: ManipulationKind,
        schedule: ScheduleSpec,
        beta: Option<f64>,
        scenario: &Scenario,
    ) -> Self {
        let mut cfg = ManipulationConfig::new(kind, schedule);
        cfg.beta = beta;
        if kind.is_masked() {
            cfg = cfg.with_mask(scenario.mask.clone());
        }
        if kind == ManipulationKind::Cam {
            cfg = cfg.with_cam_hook(scenario.cam_hook.clone());
        }
        cfg
    }
}

pub fn run_sweep(scenario: &Scenario, axes: &SweepAxes, seed: u64) -> Result<SweepTable> {
    run_sweep_with(&scenario.model, scenario, axes, seed)
}

/// Sweep using an arbitrary denoiser; densities still come from the scenario model.
pub fn run_sweep_with(
    denoiser: &dyn Denoiser,
    scenario: &Scenario,
    axes: &SweepAxes,
    seed: u64,
) -> Result<SweepTable> {
    let sampler = Sampler::new(denoiser, &scenario.grid, &scenario.schedule)?;
    let points = axes.points(scenario.grid.len())?;
    let x_t = scenario.initial_noise(seed);
    let path_b = sampler.generate(&x_t, &scenario.target, None)?;
    let path_a = sampler.generate(&x_t, &scenario.source, None)?;
    let hooks = HookRegistry::default();

    let evaluate =
        |(kind, spec, beta): &(ManipulationKind, ScheduleSpec, Option<f64>)| -> Result<SweepRow> {
            let cfg = ManipulationConfig::for_scenario(*kind, *spec, *beta, scenario);
            let result =
                sampler.run_edit(&x_t, &scenario.source, &scenario.target, &cfg, &hooks)?;
            let metrics = score_edit(&result, &path_b, &scenario.model, &scenario.target)?;
            Ok(SweepRow {
                kind: *kind,
                schedule: spec.kind(),
                t_max: spec.t_max(),
                t_min: spec.t_min(),
                weight: spec.amplitude(),
                beta: *beta,
                seed,
                metrics,
                endpoint: result.path.endpoint().clone(),
            })
        };
    let rows: Result<Vec<SweepRow>> = if denoiser.concurrent() {
        points.par_iter().map(evaluate).collect()
    } else {
        points.iter().map(evaluate).collect()
    };
    let mut rows = rows?;
    rows.sort_by(SweepRow::order);
    Ok(SweepTable {
        scenario: scenario.name.clone(),
        seed,
        rows,
        endpoint_a: path_a.endpoint().clone(),
        endpoint_b: path_b.endpoint().clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionRow {
    pub sample_steps: usize,
    pub samples: usize,
    pub mean_error: f64,
    pub max_error: f64,
}

/// Relative round-trip error `‖gen(invert(x_0)) − x_0‖ / ‖x_0‖` for clean
/// points drawn from the scenario's source mixture.
pub fn inversion_report(
    denoiser: &dyn Denoiser,
    scenario: &Scenario,
    samples: usize,
    sample_steps: &[usize],
    seed: u64,
) -> Result<Vec<InversionRow>> {
    if samples == 0 {
        return Err(Error::param("inversion report needs at least one sample"));
    }
    let stream = SeedStream::new(seed).split(streams::INVERSION_SAMPLES);
    let data = scenario.sample_data(&scenario.source, samples, &stream);
    sample_steps
        .iter()
        .map(|&steps| {
            let sc = scenario.clone().with_sample_steps(steps)?;
            let sampler = Sampler::new(denoiser, &sc.grid, &sc.schedule)?;
            let errors = data
                .iter()
                .map(|x0| {
                    let inv = sampler.invert(x0, &sc.source)?;
                    let regen = sampler.generate(inv.endpoint(), &sc.source, None)?;
                    Ok(vector::relative_error(regen.endpoint(), x0))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(InversionRow {
                sample_steps: steps,
                samples,
                mean_error: errors.iter().sum::<f64>() / samples as f64,
                max_error: errors.iter().copied().fold(0.0, f64::max),
            })
        })
        .collect()
}
