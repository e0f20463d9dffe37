//! Run configuration: a strict JSON document plus dotted-path overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mdp_core::{
    AlphaSchedule, BinaryMask, ConditionBook, ConditionEmbedding, ConditionInput, Denoiser,
    GmmComponent, GmmDenoiser, ManipulationConfig, ManipulationKind, NullTextOptions, Scenario,
    ScheduleKind, ScheduleSpec, TimestepGrid,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "MDP_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "mdp-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub conditions: ConditionsSection,
    pub sampler: SamplerSection,
    #[serde(default)]
    pub manipulation: Option<ManipulationSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub m: usize,
    pub components: Vec<ComponentSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSection {
    pub weight: f64,
    pub base_mean: Vec<f64>,
    /// `d` rows of `m` entries.
    pub condition_map: Vec<Vec<f64>>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsSection {
    pub null: Vec<f64>,
    pub source: String,
    pub target: String,
    pub named: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub train_steps: usize,
    pub sample_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(default)]
    pub guidance_scale: Option<f64>,
    #[serde(default)]
    pub null_text: NullTextSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullTextSection {
    pub iterations: usize,
    pub step_size: f64,
}

impl Default for NullTextSection {
    fn default() -> Self {
        let d = NullTextOptions::default();
        Self {
            iterations: d.iterations,
            step_size: d.step_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulationSection {
    pub kind: String,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub mask: Option<Vec<f64>>,
    #[serde(default)]
    pub cam_hook: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: String,
    pub t_min: usize,
    pub t_max: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: None,
            formats: vec!["csv".into(), "svg".into()],
        }
    }
}

impl ManipulationSection {
    pub fn from_config(cfg: &ManipulationConfig) -> Self {
        Self {
            kind: cfg.kind.name().to_string(),
            schedule: ScheduleSection {
                kind: cfg.schedule.kind().name().to_string(),
                t_min: cfg.schedule.t_min(),
                t_max: cfg.schedule.t_max(),
                amplitude: cfg.schedule.amplitude(),
            },
            beta: cfg.beta,
            mask: cfg.mask.as_ref().map(|m| m.values().to_vec()),
            cam_hook: cfg.cam_hook.clone(),
        }
    }

    pub fn build(&self, sample_steps: usize, dim: usize) -> Result<ManipulationConfig, CliError> {
        let kind: ManipulationKind = self.kind.parse()?;
        let schedule_kind: ScheduleKind = self.schedule.kind.parse()?;
        let schedule = ScheduleSpec::new(
            schedule_kind,
            self.schedule.t_min,
            self.schedule.t_max,
            sample_steps,
            self.schedule.amplitude,
        )?;
        let mut cfg = ManipulationConfig::new(kind, schedule);
        cfg.beta = self.beta;
        cfg.mask = self.mask.clone().map(BinaryMask::new).transpose()?;
        cfg.cam_hook = self.cam_hook.clone();
        cfg.validate(sample_steps, dim)?;
        Ok(cfg)
    }
}

/// A validated configuration resolved into engine objects.
#[derive(Debug, Clone)]
pub struct Runtime {
    pub seed: u64,
    pub scenario: Scenario,
    pub manipulation: Option<ManipulationConfig>,
    pub guidance_scale: Option<f64>,
    pub null_text: NullTextOptions,
    pub formats: Vec<String>,
    pub output_dir: Option<PathBuf>,
}

impl Runtime {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }

    pub fn manipulation(&self) -> Result<&ManipulationConfig, CliError> {
        self.manipulation
            .as_ref()
            .ok_or_else(|| CliError::Validation("config has no manipulation section".into()))
    }
}

impl RunConfig {
    /// The bundled two-condition demo with the local-edit PNI preset.
    pub fn demo() -> Self {
        let sc = Scenario::demo();
        let manipulation =
            mdp_core::manipulation_preset("pni-local", sc.grid.len()).expect("preset");
        Self::from_scenario(&sc, 42, Some(&manipulation))
    }

    pub fn from_scenario(
        sc: &Scenario,
        seed: u64,
        manipulation: Option<&ManipulationConfig>,
    ) -> Self {
        let d = sc.model.latent_dim();
        let m = sc.model.condition_dim();
        let components = sc
            .model
            .components()
            .iter()
            .map(|c| ComponentSection {
                weight: c.weight,
                base_mean: c.base_mean.clone(),
                condition_map: c
                    .condition_map
                    .chunks(m.max(1))
                    .map(<[f64]>::to_vec)
                    .collect(),
                variance: c.variance,
            })
            .collect();
        let named = sc
            .conditions
            .names()
            .map(|n| {
                let v = sc
                    .conditions
                    .embed(ConditionInput::Preset(n))
                    .expect("named preset");
                (n.to_string(), v.values().to_vec())
            })
            .collect::<BTreeMap<_, _>>();
        let name_of = |c: &ConditionEmbedding| {
            named
                .iter()
                .find(|(_, v)| v.as_slice() == c.values())
                .map(|(k, _)| k.clone())
                .unwrap_or_default()
        };
        Self {
            seed,
            model: ModelSection { d, m, components },
            conditions: ConditionsSection {
                null: sc.conditions.null_embedding().values().to_vec(),
                source: name_of(&sc.source),
                target: name_of(&sc.target),
                named: named.clone(),
            },
            sampler: SamplerSection {
                train_steps: sc.schedule.train_steps(),
                sample_steps: sc.grid.len(),
                beta_min: mdp_core::schedule::DEFAULT_BETA_MIN,
                beta_max: mdp_core::schedule::DEFAULT_BETA_MAX,
                guidance_scale: None,
                null_text: NullTextSection::default(),
            },
            manipulation: manipulation.map(ManipulationSection::from_config),
            output: OutputSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config: {e}")))?;
        Self::from_value(value, overrides)
    }

    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self, CliError> {
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, CliError> {
        let value = serde_json::to_value(self).expect("config serializes");
        Self::from_value(value, overrides)
    }

    /// Canonical form: fixed field order, pretty-printed, trailing newline.
    pub fn canonical(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        ))
    }

    pub fn build(&self) -> Result<Runtime, CliError> {
        let ms = &self.model;
        let components = ms
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if c.condition_map.len() != ms.d
                    || c.condition_map.iter().any(|row| row.len() != ms.m)
                {
                    return Err(CliError::Validation(format!(
                        "model.components[{k}].condition_map must be {} rows of {} entries",
                        ms.d, ms.m
                    )));
                }
                Ok(GmmComponent {
                    weight: c.weight,
                    base_mean: c.base_mean.clone(),
                    condition_map: c.condition_map.concat(),
                    variance: c.variance,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let model = GmmDenoiser::new(ms.d, ms.m, components)?;

        let cs = &self.conditions;
        let mut conditions = ConditionBook::new(ms.m, cs.null.clone())?;
        for (name, v) in &cs.named {
            conditions.insert(name.clone(), v.clone())?;
        }
        let source = conditions.embed(ConditionInput::Preset(&cs.source))?;
        let target = conditions.embed(ConditionInput::Preset(&cs.target))?;

        let ss = &self.sampler;
        let schedule = AlphaSchedule::linear_beta(ss.train_steps, ss.beta_min, ss.beta_max)?;
        let grid = TimestepGrid::new(ss.train_steps, ss.sample_steps)?;
        if schedule.alpha_bar(ss.train_steps) >= 1.0 {
            return Err(CliError::Validation(
                "sampler: beta range adds no noise; the denoiser is undefined at alpha_bar = 1"
                    .into(),
            ));
        }
        if ss.null_text.step_size.is_nan() || ss.null_text.step_size <= 0.0 {
            return Err(CliError::Validation(
                "sampler.null_text.step_size must be positive".into(),
            ));
        }
        let null_text = NullTextOptions {
            iterations: ss.null_text.iterations,
            step_size: ss.null_text.step_size,
            ..NullTextOptions::default()
        };

        let manipulation = self
            .manipulation
            .as_ref()
            .map(|m| m.build(ss.sample_steps, ms.d))
            .transpose()?;

        for f in &self.output.formats {
            if f != "csv" && f != "svg" {
                return Err(CliError::Validation(format!(
                    "output.formats: unknown format `{f}`"
                )));
            }
        }

        let mut mask = vec![0.0; ms.d];
        mask[0] = 1.0;
        let scenario = Scenario {
            name: "config".into(),
            model,
            conditions,
            source,
            target,
            schedule,
            grid,
            mask: manipulation
                .as_ref()
                .and_then(|m| m.mask.clone())
                .unwrap_or(BinaryMask::new(mask)?),
            cam_hook: manipulation
                .as_ref()
                .and_then(|m| m.cam_hook.clone())
                .unwrap_or_else(|| mdp_core::presets::DEFAULT_CAM_HOOK.into()),
        };
        Ok(Runtime {
            seed: self.seed,
            scenario,
            manipulation,
            guidance_scale: ss.guidance_scale,
            null_text,
            formats: self.output.formats.clone(),
            output_dir: self.output.directory.clone(),
        })
    }
}

/// Applies `a.b.c=value`. The value is read as JSON when it parses, as a
/// plain string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Validation(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Validation(format!(
            "override path `{path}` is malformed"
        )));
    }
    let crosses =
        || CliError::Validation(format!("override path `{path}` crosses a non-container"));
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        node = match node {
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| crosses())?;
                items.get_mut(idx).ok_or_else(|| {
                    CliError::Validation(format!(
                        "override path `{path}`: index {idx} out of range"
                    ))
                })?
            }
            Value::Object(map) => {
                let slot = map.entry((*key).to_string()).or_insert(Value::Null);
                if slot.is_null() {
                    *slot = Value::Object(Default::default());
                }
                slot
            }
            _ => return Err(crosses()),
        };
    }
    let last = keys[keys.len() - 1];
    match node {
        Value::Array(items) => {
            let idx: usize = last.parse().map_err(|_| crosses())?;
            *items.get_mut(idx).ok_or_else(|| {
                CliError::Validation(format!("override path `{path}`: index {idx} out of range"))
            })? = value;
        }
        Value::Object(map) => {
            map.insert(last.to_string(), value);
        }
        _ => return Err(crosses()),
    }
    Ok(())
}
