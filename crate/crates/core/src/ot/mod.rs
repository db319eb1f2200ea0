//! Optimal-transport estimates: learned transport maps, exact discrete
//! assignments and the closed-form Gaussian reference.

mod discrete;
mod endpoint;
mod gaussian;
mod transport;

pub use discrete::{assignment, discrete_w2};
pub use endpoint::{Endpoint, EndpointConfig, Kde};
pub use gaussian::{gaussian_w2, Gaussian};
pub use transport::{empirical_w2, repeated_w2, transport_samples, TransportResult};
