//! Lagrangian flow networks.

pub mod bijection;
pub mod diffcore;
pub mod error;
pub mod field;
pub mod metrics;
pub mod odesolve;
pub mod ot;
pub mod synthdata;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
