//! DDIM stepping, trajectory generation, inversion and null-text inversion.

use log::warn;

use crate::denoiser::{ConditionEmbedding, Denoiser, Latent, NoisePrediction};
use crate::error::{Error, Result};
use crate::schedule::{AlphaSchedule, TimestepGrid};
use crate::vector;

/// Predicted clean latent `(x_t − √(1 − ᾱ_t) ε) / √ᾱ_t`.
pub fn f_theta(x: &[f64], eps: &[f64], alpha_bar: f64) -> Result<Latent> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::param(format!(
            "alpha_bar must lie in (0, 1], got {alpha_bar}"
        )));
    }
    check_same_len(x, eps)?;
    Ok(Latent(clean_estimate(x, eps, alpha_bar)))
}

fn clean_estimate(x: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let noise_scale = (1.0 - alpha_bar).sqrt();
    let inv = 1.0 / alpha_bar.sqrt();
    x.iter()
        .zip(eps)
        .map(|(xi, ei)| (xi - noise_scale * ei) * inv)
        .collect()
}

/// Re-noise the clean estimate of `(x, eps)` at level `alpha_to`.
fn transfer(x: &[f64], eps: &[f64], alpha_from: f64, alpha_to: f64) -> Latent {
    if alpha_from == alpha_to {
        return Latent(x.to_vec());
    }
    let clean = clean_estimate(x, eps, alpha_from);
    Latent(vector::lin_comb(
        alpha_to.sqrt(),
        &clean,
        (1.0 - alpha_to).sqrt(),
        eps,
    ))
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "noise prediction",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// One deterministic DDIM update from level `alpha_bar_t` to the less noisy
/// `alpha_bar_prev`.
pub fn ddim_step(x: &[f64], eps: &[f64], alpha_bar_t: f64, alpha_bar_prev: f64) -> Result<Latent> {
    if !(alpha_bar_t > 0.0 && alpha_bar_t < 1.0) {
        return Err(Error::param(format!(
            "alpha_bar_t must lie in (0, 1), got {alpha_bar_t}"
        )));
    }
    if !(alpha_bar_prev > 0.0 && alpha_bar_prev <= 1.0) {
        return Err(Error::param(format!(
            "alpha_bar_prev must lie in (0, 1], got {alpha_bar_prev}"
        )));
    }
    if alpha_bar_prev < alpha_bar_t {
        return Err(Error::param(format!(
            "schedule order violated: alpha_bar_prev {alpha_bar_prev} < alpha_bar_t {alpha_bar_t}"
        )));
    }
    check_same_len(x, eps)?;
    Ok(transfer(x, eps, alpha_bar_t, alpha_bar_prev))
}

/// The reverse update `x_{t+1} = √ᾱ_{t+1} f_θ(x_t) + √(1 − ᾱ_{t+1}) ε`.
pub fn ddim_invert_step(
    x: &[f64],
    eps: &[f64],
    alpha_bar_t: f64,
    alpha_bar_next: f64,
) -> Result<Latent> {
    if !(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0) || !(alpha_bar_next > 0.0 && alpha_bar_next < 1.0)
    {
        return Err(Error::param(format!(
            "inversion levels out of range: {alpha_bar_t} -> {alpha_bar_next}"
        )));
    }
    if alpha_bar_next > alpha_bar_t {
        return Err(Error::param(format!(
            "schedule order violated: alpha_bar_next {alpha_bar_next} > alpha_bar_t {alpha_bar_t}"
        )));
    }
    check_same_len(x, eps)?;
    Ok(transfer(x, eps, alpha_bar_t, alpha_bar_next))
}

/// Classifier-free guidance `ε_c + β (ε_c − ε_∅)`.
pub fn cfg_combine(eps_cond: &[f64], eps_null: &[f64], beta: f64) -> NoisePrediction {
    debug_assert_eq!(eps_cond.len(), eps_null.len());
    NoisePrediction(
        eps_cond
            .iter()
            .zip(eps_null)
            .map(|(c, n)| c + beta * (c - n))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Generation,
    Inversion,
}

/// A recorded trajectory. For generation `latents` runs `x_T … x_0`; for
/// inversion it runs `x_0 … x_T`. `noises[i]` is the ε that moved
/// `latents[i]` to `latents[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub grid: TimestepGrid,
    pub latents: Vec<Latent>,
    pub noises: Vec<NoisePrediction>,
    pub condition: ConditionEmbedding,
    pub direction: Direction,
}

impl PathRecord {
    pub fn start(&self) -> &Latent {
        &self.latents[0]
    }

    pub fn endpoint(&self) -> &Latent {
        self.latents.last().expect("paths are never empty")
    }

    /// Noise levels `(from, to)` of transition `i`.
    pub fn levels(&self, schedule: &AlphaSchedule, i: usize) -> (f64, f64) {
        match self.direction {
            Direction::Generation => self.grid.alphas(schedule, i),
            Direction::Inversion => {
                let g = self.grid.len() - 1 - i;
                let (a_t, a_prev) = self.grid.alphas(schedule, g);
                (a_prev, a_t)
            }
        }
    }

    /// Recompute every `latents[i + 1]` from `(latents[i], noises[i])`.
    pub fn replay(&self, schedule: &AlphaSchedule) -> Vec<Latent> {
        (0..self.noises.len())
            .map(|i| {
                let (from, to) = self.levels(schedule, i);
                transfer(&self.latents[i], &self.noises[i], from, to)
            })
            .collect()
    }

    /// Largest relative deviation between stored and replayed latents.
    pub fn replay_error(&self, schedule: &AlphaSchedule) -> f64 {
        self.replay(schedule)
            .iter()
            .zip(&self.latents[1..])
            .map(|(r, l)| vector::relative_error(r, l))
            .fold(0.0, f64::max)
    }
}

/// Null embeddings used by classifier-free guidance.
#[derive(Debug, Clone, PartialEq)]
pub enum NullEmbeddings {
    Shared(ConditionEmbedding),
    /// One embedding per grid position, in generation order.
    PerStep(Vec<ConditionEmbedding>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Guidance {
    pub beta: f64,
    pub nulls: NullEmbeddings,
}

impl Guidance {
    pub fn shared(beta: f64, null: ConditionEmbedding) -> Self {
        Self {
            beta,
            nulls: NullEmbeddings::Shared(null),
        }
    }

    fn null_at(&self, i: usize) -> &ConditionEmbedding {
        match &self.nulls {
            NullEmbeddings::Shared(c) => c,
            NullEmbeddings::PerStep(v) => &v[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullTextOptions {
    pub iterations: usize,
    pub step_size: f64,
    /// Central-difference perturbation.
    pub perturbation: f64,
    /// Step-size halvings tried before giving up on an iteration.
    pub max_backtracks: usize,
}

impl Default for NullTextOptions {
    fn default() -> Self {
        Self {
            iterations: 10,
            step_size: 0.1,
            perturbation: 1e-4,
            max_backtracks: 12,
        }
    }
}

/// Per-step optimizer trace.
#[derive(Debug, Clone, PartialEq)]
pub struct NullTextStep {
    pub step: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Objective after each accepted iteration, starting with the initial value.
    pub history: Vec<f64>,
    /// Set when the optimizer stopped because no step size decreased the objective.
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullTextInversion {
    /// Optimized ∅_t, one per grid position in generation order.
    pub embeddings: Vec<ConditionEmbedding>,
    pub steps: Vec<NullTextStep>,
    /// The plain DDIM inversion being tracked (`x_0 … x_T`).
    pub inversion: PathRecord,
    /// Guided regeneration from the inversion endpoint with the optimized ∅_t.
    pub reconstruction: PathRecord,
}

/// Binds a denoiser to a grid and noise schedule.
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    denoiser: &'a dyn Denoiser,
    grid: &'a TimestepGrid,
    schedule: &'a AlphaSchedule,
}

impl<'a> Sampler<'a> {
    pub fn new(
        denoiser: &'a dyn Denoiser,
        grid: &'a TimestepGrid,
        schedule: &'a AlphaSchedule,
    ) -> Result<Self> {
        if grid.train_steps() > schedule.train_steps() {
            return Err(Error::param(format!(
                "grid expects {} training steps but the schedule has {}",
                grid.train_steps(),
                schedule.train_steps()
            )));
        }
        Ok(Self {
            denoiser,
            grid,
            schedule,
        })
    }

    pub fn denoiser(&self) -> &'a dyn Denoiser {
        self.denoiser
    }

    pub fn grid(&self) -> &'a TimestepGrid {
        self.grid
    }

    pub fn schedule(&self) -> &'a AlphaSchedule {
        self.schedule
    }

    pub fn check_latent(&self, x: &[f64]) -> Result<()> {
        let d = self.denoiser.latent_dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                what: "latent",
                expected: d,
                found: x.len(),
            });
        }
        if !vector::all_finite(x) {
            return Err(Error::param("latent entries must be finite"));
        }
        Ok(())
    }

    pub fn check_condition(&self, c: &ConditionEmbedding) -> Result<()> {
        let m = self.denoiser.condition_dim();
        if c.dim() != m {
            return Err(Error::DimensionMismatch {
                what: "condition",
                expected: m,
                found: c.dim(),
            });
        }
        Ok(())
    }

    /// ε_θ at grid position `i`.
    pub fn predict(&self, x: &Latent, c: &ConditionEmbedding, i: usize) -> Result<NoisePrediction> {
        let step = self.grid.steps()[i];
        let eps = self
            .denoiser
            .predict_noise(x, c, step, self.schedule.alpha_bar(step))
            .map_err(Error::denoiser(step))?;
        if eps.len() != x.len() {
            return Err(Error::Denoiser {
                step,
                source: crate::error::DenoiserError::DimensionMismatch {
                    what: "eps",
                    expected: x.len(),
                    found: eps.len(),
                },
            });
        }
        Ok(eps)
    }

    /// DDIM update at grid position `i`.
    pub fn step(&self, x: &[f64], eps: &[f64], i: usize) -> Result<Latent> {
        let (a_t, a_prev) = self.grid.alphas(self.schedule, i);
        ddim_step(x, eps, a_t, a_prev)
    }

    /// Generation driven by an arbitrary per-position condition.
    pub fn generate_with<F>(
        &self,
        x_t: &Latent,
        condition_at: F,
        label: &ConditionEmbedding,
    ) -> Result<PathRecord>
    where
        F: Fn(usize) -> ConditionEmbedding,
    {
        self.check_latent(x_t)?;
        let n = self.grid.len();
        let mut latents = Vec::with_capacity(n + 1);
        let mut noises = Vec::with_capacity(n);
        latents.push(x_t.clone());
        for i in 0..n {
            let c = condition_at(i);
            self.check_condition(&c)?;
            let x = &latents[i];
            let eps = self.predict(x, &c, i)?;
            let next = self.step(x, &eps, i)?;
            noises.push(eps);
            latents.push(next);
        }
        Ok(PathRecord {
            grid: self.grid.clone(),
            latents,
            noises,
            condition: label.clone(),
            direction: Direction::Generation,
        })
    }

    /// GenPath: the full trajectory from `x_T` under `c`, optionally guided.
    pub fn generate(
        &self,
        x_t: &Latent,
        c: &ConditionEmbedding,
        guidance: Option<&Guidance>,
    ) -> Result<PathRecord> {
        self.check_latent(x_t)?;
        self.check_condition(c)?;
        let n = self.grid.len();
        if let Some(g) = guidance {
            match &g.nulls {
                NullEmbeddings::Shared(null) => self.check_condition(null)?,
                NullEmbeddings::PerStep(v) => {
                    if v.len() != n {
                        return Err(Error::param(format!(
                            "guidance supplies {} null embeddings for a {n}-step grid",
                            v.len()
                        )));
                    }
                    for null in v {
                        self.check_condition(null)?;
                    }
                }
            }
        }
        let mut latents = Vec::with_capacity(n + 1);
        let mut noises = Vec::with_capacity(n);
        latents.push(x_t.clone());
        for i in 0..n {
            let x = &latents[i];
            let mut eps = self.predict(x, c, i)?;
            if let Some(g) = guidance {
                let eps_null = self.predict(x, g.null_at(i), i)?;
                eps = cfg_combine(&eps, &eps_null, g.beta);
            }
            let next = self.step(x, &eps, i)?;
            noises.push(eps);
            latents.push(next);
        }
        Ok(PathRecord {
            grid: self.grid.clone(),
            latents,
            noises,
            condition: c.clone(),
            direction: Direction::Generation,
        })
    }

    /// Deterministic DDIM inversion `x_0 → x_T`. The noise for the move into
    /// level `ᾱ_{t+1}` is predicted at the current latent with the target
    /// step's noise level, since ε_θ is undefined at the clean endpoint.
    pub fn invert(&self, x_0: &Latent, c: &ConditionEmbedding) -> Result<PathRecord> {
        self.check_latent(x_0)?;
        self.check_condition(c)?;
        let n = self.grid.len();
        let mut latents = Vec::with_capacity(n + 1);
        let mut noises = Vec::with_capacity(n);
        latents.push(x_0.clone());
        for j in 0..n {
            let i = n - 1 - j;
            let (a_next, a_cur) = self.grid.alphas(self.schedule, i);
            let x = &latents[j];
            let eps = self.predict(x, c, i)?;
            let next = ddim_invert_step(x, &eps, a_cur, a_next)?;
            noises.push(eps);
            latents.push(next);
        }
        Ok(PathRecord {
            grid: self.grid.clone(),
            latents,
            noises,
            condition: c.clone(),
            direction: Direction::Inversion,
        })
    }

    /// Per-step optimization of the guidance null embedding so that guided
    /// regeneration from the inversion endpoint tracks the inversion path.
    pub fn null_text_invert(
        &self,
        x_0: &Latent,
        c: &ConditionEmbedding,
        beta: f64,
        initial_null: &ConditionEmbedding,
        opts: &NullTextOptions,
    ) -> Result<NullTextInversion> {
        if opts.step_size.is_nan()
            || opts.step_size <= 0.0
            || opts.perturbation.is_nan()
            || opts.perturbation <= 0.0
        {
            return Err(Error::param(
                "null-text step size and perturbation must be positive",
            ));
        }
        self.check_condition(initial_null)?;
        let inversion = self.invert(x_0, c)?;
        let n = self.grid.len();
        let mut x_star = inversion.endpoint().clone();
        let mut null = initial_null.values().to_vec();
        let mut embeddings = Vec::with_capacity(n);
        let mut steps = Vec::with_capacity(n);

        for i in 0..n {
            let target = &inversion.latents[n - 1 - i];
            let eps_c = self.predict(&x_star, c, i)?;
            let objective = |values: &[f64]| -> Result<(f64, Latent)> {
                let emb = ConditionEmbedding::null(values.to_vec());
                let eps_null = self.predict(&x_star, &emb, i)?;
                let next = self.step(&x_star, &cfg_combine(&eps_c, &eps_null, beta), i)?;
                Ok((vector::distance(&next, target).powi(2), next))
            };

            let (mut current, mut next) = objective(&null)?;
            let initial = current;
            let mut history = vec![current];
            let mut diagnostic = None;
            let mut lr = opts.step_size;
            let h = opts.perturbation;

            for iter in 0..opts.iterations {
                if beta == 0.0 || current == 0.0 {
                    break;
                }
                let mut grad = vec![0.0; null.len()];
                for k in 0..null.len() {
                    let mut probe = null.clone();
                    probe[k] = null[k] + h;
                    let (plus, _) = objective(&probe)?;
                    probe[k] = null[k] - h;
                    let (minus, _) = objective(&probe)?;
                    grad[k] = (plus - minus) / (2.0 * h);
                }
                if vector::norm(&grad) == 0.0 {
                    break;
                }
                let mut accepted = false;
                for _ in 0..=opts.max_backtracks {
                    let trial = vector::lin_comb(1.0, &null, -lr, &grad);
                    let (value, trial_next) = objective(&trial)?;
                    if value.is_finite() && value <= current {
                        null = trial;
                        current = value;
                        next = trial_next;
                        accepted = true;
                        break;
                    }
                    lr *= 0.5;
                }
                if !accepted {
                    let step = self.grid.steps()[i];
                    let msg = format!(
                        "step {step}: objective could not be decreased after {iter} iterations (stopped at {current:.6e})"
                    );
                    warn!("null-text inversion {msg}");
                    diagnostic = Some(msg);
                    break;
                }
                history.push(current);
            }

            steps.push(NullTextStep {
                step: self.grid.steps()[i],
                initial_objective: initial,
                final_objective: current,
                history,
                diagnostic,
            });
            embeddings.push(ConditionEmbedding::null(null.clone()));
            x_star = next;
        }

        let guidance = Guidance {
            beta,
            nulls: NullEmbeddings::PerStep(embeddings.clone()),
        };
        let reconstruction = self.generate(inversion.endpoint(), c, Some(&guidance))?;
        Ok(NullTextInversion {
            embeddings,
            steps,
            inversion,
            reconstruction,
        })
    }
}

/// GenPath with an explicit denoiser, grid and schedule.
pub fn generate(
    denoiser: &dyn Denoiser,
    x_t: &Latent,
    c: &ConditionEmbedding,
    grid: &TimestepGrid,
    schedule: &AlphaSchedule,
    guidance: Option<&Guidance>,
) -> Result<PathRecord> {
    Sampler::new(denoiser, grid, schedule)?.generate(x_t, c, guidance)
}

pub fn ddim_invert(
    denoiser: &dyn Denoiser,
    x_0: &Latent,
    c: &ConditionEmbedding,
    grid: &TimestepGrid,
    schedule: &AlphaSchedule,
) -> Result<PathRecord> {
    Sampler::new(denoiser, grid, schedule)?.invert(x_0, c)
}

#[allow(clippy::too_many_arguments)]
pub fn null_text_invert(
    denoiser: &dyn Denoiser,
    x_0: &Latent,
    c: &ConditionEmbedding,
    beta: f64,
    initial_null: &ConditionEmbedding,
    grid: &TimestepGrid,
    schedule: &AlphaSchedule,
    opts: &NullTextOptions,
) -> Result<NullTextInversion> {
    Sampler::new(denoiser, grid, schedule)?.null_text_invert(x_0, c, beta, initial_null, opts)
}
