use crate::error::{Error, Result};
use crate::models::GeneratorConfig;
use crate::numerics::ParamSet;

/// Which parameters may change during training.
///
/// An empty prefix list means everything is trainable; otherwise only names
/// starting with one of the prefixes are updated.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FreezeSpec {
    trainable_prefixes: Vec<String>,
}

impl FreezeSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn trainable<S: Into<String>>(prefixes: impl IntoIterator<Item = S>) -> Self {
        FreezeSpec {
            trainable_prefixes: prefixes.into_iter().map(Into::into).collect(),
        }
    }

    /// Everything frozen except the output head and the last decoder block.
    pub fn head_and_last_decoder_block(config: &GeneratorConfig) -> Self {
        Self::trainable(["head.".to_string(), config.last_decoder_block()])
    }

    pub fn is_unfrozen(&self) -> bool {
        self.trainable_prefixes.is_empty()
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.is_unfrozen() || self.trainable_prefixes.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Rejects a spec whose trainable set matches no parameter.
    pub fn validate(&self, params: &ParamSet) -> Result<()> {
        if self.is_unfrozen() || params.names().any(|n| self.is_trainable(n)) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "freeze spec {:?} leaves no trainable parameters",
                self.trainable_prefixes
            )))
        }
    }
}
