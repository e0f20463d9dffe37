//! Functional stand-ins for cross-attention manipulation.
//!
//! A hook receives the path-A latent at the current step and returns the
//! noise to apply there. No attention maps are computed here; hooks that
//! need them declare it and are refused by denoisers without introspection.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::denoiser::{ConditionEmbedding, Latent, NoisePrediction};
use crate::error::{Error, Result};
use crate::sampler::Sampler;

pub struct CamContext<'a> {
    pub sampler: &'a Sampler<'a>,
    /// `x^A_t`.
    pub latent_a: &'a Latent,
    /// `ε^A_t` as recorded on path A.
    pub noise_a: &'a NoisePrediction,
    pub condition_a: &'a ConditionEmbedding,
    pub condition_b: &'a ConditionEmbedding,
    /// Grid position.
    pub position: usize,
}

pub trait CamHook: Send + Sync {
    fn name(&self) -> &str;

    fn requires_attention(&self) -> bool {
        false
    }

    fn apply(&self, ctx: &CamContext<'_>) -> Result<NoisePrediction>;
}

/// ε_θ(x^A_t, c_B): the new condition evaluated on the source latent.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityHook;

impl CamHook for IdentityHook {
    fn name(&self) -> &str {
        "identity"
    }

    fn apply(&self, ctx: &CamContext<'_>) -> Result<NoisePrediction> {
        ctx.sampler
            .predict(ctx.latent_a, ctx.condition_b, ctx.position)
    }
}

/// ε^A_t unchanged, i.e. full injection of the source prediction.
#[derive(Debug, Default, Clone, Copy)]
pub struct ReplayHook;

impl CamHook for ReplayHook {
    fn name(&self) -> &str {
        "replay"
    }

    fn apply(&self, ctx: &CamContext<'_>) -> Result<NoisePrediction> {
        Ok(ctx.noise_a.clone())
    }
}

#[derive(Clone)]
pub struct HookRegistry {
    hooks: BTreeMap<String, Arc<dyn CamHook>>,
}

impl HookRegistry {
    pub fn empty() -> Self {
        Self {
            hooks: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, hook: Arc<dyn CamHook>) {
        self.hooks.insert(hook.name().to_string(), hook);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn CamHook>> {
        self.hooks
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown cam hook `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.hooks.keys().map(String::as_str)
    }
}

impl Default for HookRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(IdentityHook));
        reg.register(Arc::new(ReplayHook));
        reg
    }
}

impl fmt::Debug for HookRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.hooks.keys()).finish()
    }
}
