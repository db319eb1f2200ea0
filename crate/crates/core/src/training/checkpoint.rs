use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use crate::bijection::{ArchitectureConfig, DomainBox, InverseOptions};
use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::field::LagrangianField;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained field and resume its optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub architecture: ArchitectureConfig,
    pub domain: DomainBox,
    pub time_range: (f64, f64),
    pub inverse: InverseOptions,
    pub params: ParamStore,
    /// Persistent power-iteration vectors of every residual block.
    pub power_state: Vec<Vec<Vec<f64>>>,
    pub optimizer: Option<Adam>,
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn capture(
        field: &LagrangianField,
        architecture: &ArchitectureConfig,
        optimizer: Option<&Adam>,
        seed: u64,
        epoch: usize,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            architecture: architecture.clone(),
            domain: field.domain().clone(),
            time_range: field.time_range(),
            inverse: field.stack().inverse_options(),
            params: field.params().clone(),
            power_state: field.stack().power_state(),
            optimizer: optimizer.cloned(),
            seed,
            epoch,
        }
    }

    /// Rebuilds the field with exactly the stored parameters.
    pub fn restore(&self) -> Result<LagrangianField> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut field = LagrangianField::new(&self.architecture, self.domain.clone(), self.time_range, 0.0, &mut rng)?;
        if field.params().slots() != self.params.slots() {
            return Err(Error::invalid("checkpoint parameters do not match the architecture"));
        }
        field.params_mut().set_values(self.params.values());
        field.stack_mut().set_power_state(self.power_state.clone())?;
        field.stack_mut().set_inverse_options(self.inverse);
        Ok(field)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
