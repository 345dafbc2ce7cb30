use super::FreezeSpec;
use crate::error::{Error, Result};
use crate::numerics::{adam_update_masked, clip_global_norm, AdamState, ParamSet};

/// Adam with global-norm clipping and optional parameter freezing.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub lr: f64,
    pub clip_norm: Option<f64>,
    freeze: FreezeSpec,
    state: AdamState,
}

impl Optimizer {
    pub fn new(lr: f64) -> Self {
        Optimizer {
            lr,
            clip_norm: None,
            freeze: FreezeSpec::none(),
            state: AdamState::new(),
        }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.clip_norm = Some(max_norm);
        self
    }

    pub fn with_freeze(mut self, freeze: FreezeSpec, params: &ParamSet) -> Result<Self> {
        freeze.validate(params)?;
        self.freeze = freeze;
        Ok(self)
    }

    pub fn freeze(&self) -> &FreezeSpec {
        &self.freeze
    }

    pub fn steps(&self) -> u64 {
        self.state.step
    }

    /// Clips (over trainable tensors only) and applies one Adam step.
    pub fn step(&mut self, params: &mut ParamSet, mut grads: ParamSet) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let freeze = &self.freeze;
        if let Some(max) = self.clip_norm {
            clip_global_norm(&mut grads, max, |n| freeze.is_trainable(n));
        }
        adam_update_masked(params, &grads, &mut self.state, self.lr, |n| freeze.is_trainable(n))?;
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        Ok(())
    }
}
