//! Noise-prediction interface and the closed-form Gaussian-mixture oracle.
//!
//! The oracle's data law under condition `c` is
//! `Σ_k w_k N(μ_k(c), σ_k² I)` with `μ_k(c) = M_k c + b_k`. For the forward
//! marginal `x_t = √ᾱ x_0 + √(1 − ᾱ) ε` the posterior over `x_0` is again a
//! mixture, so `E[x_0 | x_t, c]` and hence the optimal `ε_θ` are exact.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Deref;

use crate::error::{DenoiserError, Error, Result};
use crate::vector;

macro_rules! dense_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                vector::all_finite(&self.0)
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

dense_vector!(
    /// A point `x_t` in latent space.
    Latent
);
dense_vector!(
    /// A predicted noise `ε_t`.
    NoisePrediction
);

/// A condition vector `c`; `is_null` marks the empty condition ∅.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    values: Vec<f64>,
    is_null: bool,
}

impl ConditionEmbedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            is_null: false,
        }
    }

    pub fn null(values: Vec<f64>) -> Self {
        Self {
            values,
            is_null: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_null(&self) -> bool {
        self.is_null
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// ε_θ(x_t, c, t). Time reaches the oracle only through `alpha_bar`; the
/// training-step index is forwarded for implementations that need it.
pub trait Denoiser: Send + Sync {
    fn latent_dim(&self) -> usize;

    fn condition_dim(&self) -> usize;

    fn predict_noise(
        &self,
        x: &Latent,
        c: &ConditionEmbedding,
        step: usize,
        alpha_bar: f64,
    ) -> Result<NoisePrediction, DenoiserError>;

    /// Whether attention maps can be introspected (needed by some CAM hooks).
    fn supports_attention(&self) -> bool {
        false
    }

    /// Whether calls may be issued from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub base_mean: Vec<f64>,
    /// Row-major `d × m` matrix.
    pub condition_map: Vec<f64>,
    pub variance: f64,
}

/// Isotropic Gaussian mixture whose component means are affine in the condition.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmDenoiser {
    dim: usize,
    cond_dim: usize,
    components: Vec<GmmComponent>,
}

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
/// Variance floor used only when evaluating clean-data densities.
const DENSITY_VARIANCE_FLOOR: f64 = 1e-12;

impl GmmDenoiser {
    pub fn new(dim: usize, cond_dim: usize, components: Vec<GmmComponent>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("latent dimension must be positive"));
        }
        if components.is_empty() {
            return Err(Error::param("mixture needs at least one component"));
        }
        let mut total = 0.0;
        for (k, comp) in components.iter().enumerate() {
            if !(comp.weight.is_finite() && comp.weight > 0.0) {
                return Err(Error::param(format!(
                    "component {k}: weight must be positive"
                )));
            }
            if !(comp.variance.is_finite() && comp.variance >= 0.0) {
                return Err(Error::param(format!(
                    "component {k}: variance must be non-negative"
                )));
            }
            if comp.base_mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "base_mean",
                    expected: dim,
                    found: comp.base_mean.len(),
                });
            }
            if comp.condition_map.len() != dim * cond_dim {
                return Err(Error::DimensionMismatch {
                    what: "condition_map",
                    expected: dim * cond_dim,
                    found: comp.condition_map.len(),
                });
            }
            if !vector::all_finite(&comp.base_mean) || !vector::all_finite(&comp.condition_map) {
                return Err(Error::param(format!("component {k}: non-finite entries")));
            }
            total += comp.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::param(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self {
            dim,
            cond_dim,
            components,
        })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// `μ_k(c) = M_k c + b_k`.
    pub fn component_mean(&self, k: usize, c: &ConditionEmbedding) -> Vec<f64> {
        let comp = &self.components[k];
        let shift = vector::mat_vec(&comp.condition_map, self.dim, self.cond_dim, c.values());
        vector::add(&shift, &comp.base_mean)
    }

    fn check(&self, x: &[f64], c: &ConditionEmbedding) -> Result<(), DenoiserError> {
        if x.len() != self.dim {
            return Err(DenoiserError::DimensionMismatch {
                what: "latent",
                expected: self.dim,
                found: x.len(),
            });
        }
        if c.dim() != self.cond_dim {
            return Err(DenoiserError::DimensionMismatch {
                what: "condition",
                expected: self.cond_dim,
                found: c.dim(),
            });
        }
        Ok(())
    }

    /// Posterior component probabilities `r_k(x_t)`.
    pub fn responsibilities(
        &self,
        x: &[f64],
        c: &ConditionEmbedding,
        alpha_bar: f64,
    ) -> Result<Vec<f64>, DenoiserError> {
        self.check(x, c)?;
        check_alpha(alpha_bar)?;
        let sqrt_a = alpha_bar.sqrt();
        let logits: Vec<f64> = (0..self.components.len())
            .map(|k| {
                let comp = &self.components[k];
                let mu = self.component_mean(k, c);
                let var = alpha_bar * comp.variance + (1.0 - alpha_bar);
                let centered = vector::lin_comb(1.0, x, -sqrt_a, &mu);
                log_isotropic_gaussian(vector::dot(&centered, &centered), var, self.dim)
                    + comp.weight.ln()
            })
            .collect();
        Ok(softmax(&logits))
    }

    /// `E[x_0 | x_t, c]` under the forward marginal at level `alpha_bar`.
    pub fn posterior_mean(
        &self,
        x: &[f64],
        c: &ConditionEmbedding,
        alpha_bar: f64,
    ) -> Result<Latent, DenoiserError> {
        check_alpha(alpha_bar)?;
        self.check(x, c)?;
        if alpha_bar == 1.0 {
            return Ok(Latent(x.to_vec()));
        }
        let resp = self.responsibilities(x, c, alpha_bar)?;
        let sqrt_a = alpha_bar.sqrt();
        let mut out = vec![0.0; self.dim];
        for (k, (comp, r)) in self.components.iter().zip(&resp).enumerate() {
            let mu = self.component_mean(k, c);
            let gain = sqrt_a * comp.variance / (alpha_bar * comp.variance + 1.0 - alpha_bar);
            for ((o, &m), &xi) in out.iter_mut().zip(&mu).zip(x) {
                *o += r * (m + gain * (xi - sqrt_a * m));
            }
        }
        Ok(Latent(out))
    }

    /// Log-density of clean data `x_0` under condition `c`.
    pub fn log_density(&self, x: &[f64], c: &ConditionEmbedding) -> Result<f64, DenoiserError> {
        self.check(x, c)?;
        let logits: Vec<f64> = (0..self.components.len())
            .map(|k| {
                let comp = &self.components[k];
                let mu = self.component_mean(k, c);
                let sq = vector::distance(x, &mu).powi(2);
                comp.weight.ln()
                    + log_isotropic_gaussian(
                        sq,
                        comp.variance.max(DENSITY_VARIANCE_FLOOR),
                        self.dim,
                    )
            })
            .collect();
        Ok(log_sum_exp(&logits))
    }
}

impl Denoiser for GmmDenoiser {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn condition_dim(&self) -> usize {
        self.cond_dim
    }

    fn predict_noise(
        &self,
        x: &Latent,
        c: &ConditionEmbedding,
        _step: usize,
        alpha_bar: f64,
    ) -> Result<NoisePrediction, DenoiserError> {
        check_alpha(alpha_bar)?;
        if alpha_bar == 1.0 {
            return Err(DenoiserError::Parameter(
                "noise prediction is undefined at alpha_bar = 1 (division by zero)".into(),
            ));
        }
        let mean = self.posterior_mean(x, c, alpha_bar)?;
        let sqrt_a = alpha_bar.sqrt();
        let sqrt_1ma = (1.0 - alpha_bar).sqrt();
        Ok(NoisePrediction(
            x.iter()
                .zip(mean.iter())
                .map(|(xi, mi)| (xi - sqrt_a * mi) / sqrt_1ma)
                .collect(),
        ))
    }
}

fn check_alpha(alpha_bar: f64) -> Result<(), DenoiserError> {
    if alpha_bar > 0.0 && alpha_bar <= 1.0 {
        Ok(())
    } else {
        Err(DenoiserError::Parameter(format!(
            "alpha_bar must lie in (0, 1], got {alpha_bar}"
        )))
    }
}

fn log_isotropic_gaussian(sq_dist: f64, var: f64, dim: usize) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI * var).ln() - sq_dist / (2.0 * var)
}

pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// How a caller names a condition.
#[derive(Debug, Clone, Copy)]
pub enum ConditionInput<'a> {
    Raw(&'a [f64]),
    Preset(&'a str),
}

/// Named condition presets plus the ∅ vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBook {
    dim: usize,
    null: Vec<f64>,
    named: BTreeMap<String, Vec<f64>>,
}

impl ConditionBook {
    pub const NULL_NAME: &'static str = "null";

    pub fn new(dim: usize, null: Vec<f64>) -> Result<Self> {
        if null.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "null embedding",
                expected: dim,
                found: null.len(),
            });
        }
        Ok(Self {
            dim,
            null,
            named: BTreeMap::new(),
        })
    }

    /// All-zeros ∅.
    pub fn with_zero_null(dim: usize) -> Self {
        Self {
            dim,
            null: vec![0.0; dim],
            named: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if name == Self::NULL_NAME {
            return Err(Error::param("`null` is reserved for the empty condition"));
        }
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "condition preset",
                expected: self.dim,
                found: values.len(),
            });
        }
        self.named.insert(name, values);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn null_embedding(&self) -> ConditionEmbedding {
        ConditionEmbedding::null(self.null.clone())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.named.keys().map(String::as_str)
    }

    pub fn embed(&self, input: ConditionInput<'_>) -> Result<ConditionEmbedding> {
        match input {
            ConditionInput::Raw(values) => {
                if values.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        what: "condition",
                        expected: self.dim,
                        found: values.len(),
                    });
                }
                if !vector::all_finite(values) {
                    return Err(Error::param("condition entries must be finite"));
                }
                Ok(ConditionEmbedding::new(values.to_vec()))
            }
            ConditionInput::Preset(Self::NULL_NAME) => Ok(self.null_embedding()),
            ConditionInput::Preset(name) => self
                .named
                .get(name)
                .map(|v| ConditionEmbedding::new(v.clone()))
                .ok_or_else(|| Error::param(format!("unknown condition preset `{name}`"))),
        }
    }
}
