//! Losses, optimizer and training loop.

mod checkpoint;
mod losses;
mod optim;
mod trainer;
mod transport;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use losses::{
    data_loss, density_loss, density_term, mass_penalty, velocity_loss, velocity_term, DataBatch, DensityMode, LossParts,
    LossWeights,
};
pub use optim::{learning_rate, Adam};
pub use trainer::{predict_densities, EpochRecord, Objective, TrainReport, TrainSchedule, Trainer};
pub use transport::{ot_objective, OtBatch, OtParts, OtSampling};

#[cfg(test)]
mod tests;
