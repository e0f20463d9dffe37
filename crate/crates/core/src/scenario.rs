//! Bundled experiment setups: a mixture model, a source/target condition
//! pair and the sampling grid they are run on.

use crate::denoiser::{
    ConditionBook, ConditionEmbedding, ConditionInput, GmmComponent, GmmDenoiser, Latent,
};
use crate::error::{Error, Result};
use crate::manipulations::BinaryMask;
use crate::presets::DEFAULT_CAM_HOOK;
use crate::rng::SeedStream;
use crate::schedule::{AlphaSchedule, TimestepGrid, DEFAULT_SAMPLE_STEPS, DEFAULT_TRAIN_STEPS};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: GmmDenoiser,
    pub conditions: ConditionBook,
    pub source: ConditionEmbedding,
    pub target: ConditionEmbedding,
    pub schedule: AlphaSchedule,
    pub grid: TimestepGrid,
    /// Used by the masked operators.
    pub mask: BinaryMask,
    /// Used by CAM.
    pub cam_hook: String,
}

/// Stream identifiers under the run seed.
pub mod streams {
    pub const INITIAL_NOISE: u64 = 0;
    pub const INVERSION_SAMPLES: u64 = 1;
}

impl Scenario {
    pub const NAMES: [&'static str; 3] = ["demo", "gaussian", "point-mass"];

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "demo" => Ok(Self::demo()),
            "gaussian" => Ok(Self::single_gaussian()),
            "point-mass" => Ok(Self::point_mass()),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }

    /// Two-dimensional, three-component mixture with conditions `a` and `b`.
    pub fn demo() -> Self {
        let model = GmmDenoiser::new(
            2,
            2,
            vec![
                GmmComponent {
                    weight: 0.45,
                    base_mean: vec![-1.5, -0.5],
                    condition_map: vec![0.8, -0.6, 0.4, 0.9],
                    variance: 0.25,
                },
                GmmComponent {
                    weight: 0.35,
                    base_mean: vec![1.5, -0.5],
                    condition_map: vec![-0.5, 0.7, 0.6, 0.3],
                    variance: 0.35,
                },
                GmmComponent {
                    weight: 0.2,
                    base_mean: vec![0.0, 1.8],
                    condition_map: vec![0.3, 0.5, -0.7, 0.4],
                    variance: 0.2,
                },
            ],
        )
        .expect("demo model is valid");
        Self::with_model("demo", model, vec![1.0, 0.0], vec![0.0, 1.0])
    }

    /// One isotropic Gaussian whose mean moves with the condition; every
    /// quantity along a path is affine in `x_T`.
    pub fn single_gaussian() -> Self {
        let model = GmmDenoiser::new(
            2,
            2,
            vec![GmmComponent {
                weight: 1.0,
                base_mean: vec![0.2, -0.1],
                condition_map: vec![1.0, -0.5, 0.5, 1.2],
                variance: 1.0,
            }],
        )
        .expect("gaussian model is valid");
        Self::with_model("gaussian", model, vec![1.0, 0.0], vec![0.0, 1.0])
    }

    /// A zero-variance component: the denoiser returns the mean exactly.
    pub fn point_mass() -> Self {
        let model = GmmDenoiser::new(
            2,
            2,
            vec![GmmComponent {
                weight: 1.0,
                base_mean: vec![0.5, 1.0],
                condition_map: vec![1.0, 0.0, 0.0, 1.0],
                variance: 0.0,
            }],
        )
        .expect("point-mass model is valid");
        Self::with_model("point-mass", model, vec![1.0, 0.0], vec![0.0, 1.0])
    }

    fn with_model(name: &str, model: GmmDenoiser, a: Vec<f64>, b: Vec<f64>) -> Self {
        use crate::denoiser::Denoiser;
        let m = model.condition_dim();
        let d = model.latent_dim();
        let mut conditions = ConditionBook::with_zero_null(m);
        conditions.insert("a", a).expect("preset dims");
        conditions.insert("b", b).expect("preset dims");
        let source = conditions
            .embed(ConditionInput::Preset("a"))
            .expect("preset a");
        let target = conditions
            .embed(ConditionInput::Preset("b"))
            .expect("preset b");
        let mut mask = vec![0.0; d];
        mask[0] = 1.0;
        Self {
            name: name.to_string(),
            model,
            conditions,
            source,
            target,
            schedule: AlphaSchedule::default(),
            grid: TimestepGrid::new(DEFAULT_TRAIN_STEPS, DEFAULT_SAMPLE_STEPS)
                .expect("default grid"),
            mask: BinaryMask::new(mask).expect("binary"),
            cam_hook: DEFAULT_CAM_HOOK.to_string(),
        }
    }

    pub fn with_sample_steps(mut self, sample_steps: usize) -> Result<Self> {
        self.grid = TimestepGrid::new(self.schedule.train_steps(), sample_steps)?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        use crate::denoiser::Denoiser;
        self.model.latent_dim()
    }

    /// `x_T ~ N(0, I)` drawn from the seed's initial-noise stream.
    pub fn initial_noise(&self, seed: u64) -> Latent {
        Latent(
            SeedStream::new(seed)
                .split(streams::INITIAL_NOISE)
                .gaussian_vec(self.dim()),
        )
    }

    /// Draws `count` clean points from the mixture under `c`.
    pub fn sample_data(
        &self,
        c: &ConditionEmbedding,
        count: usize,
        stream: &SeedStream,
    ) -> Vec<Latent> {
        let comps = self.model.components();
        (0..count)
            .map(|j| {
                let mut s = stream.split(j as u64);
                let u = s.next_uniform();
                let mut acc = 0.0;
                let mut k = comps.len() - 1;
                for (idx, comp) in comps.iter().enumerate() {
                    acc += comp.weight;
                    if u < acc {
                        k = idx;
                        break;
                    }
                }
                let mu = self.model.component_mean(k, c);
                let sd = comps[k].variance.sqrt();
                Latent(mu.iter().map(|m| m + sd * s.next_gaussian()).collect())
            })
            .collect()
    }
}
