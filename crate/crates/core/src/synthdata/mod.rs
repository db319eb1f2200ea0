//! Synthetic ground-truth flows, noisy observations and toy densities.

mod fluid;
mod observations;
mod toy;

pub use fluid::{FluidConfig, FluidGroundTruth, HALF_WIDTH, TIME_RANGE};
pub use observations::{Observation, ObservationConfig, ObservationSet, Rect, Split};
pub use toy::{ToyDensity, TOY_HALF_WIDTH};

#[cfg(test)]
mod tests;
