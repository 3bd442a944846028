//! Spectral simulation of mild solutions to parabolic stochastic Cauchy
//! problems `du + A u dt = G dW`, `u(0) = 0`, on `(0, 1)^d`, together with the
//! operator calculus (fractional powers, γ-radonifying norms) and the
//! Hölder-regularity machinery used to check simulated paths against the
//! admissible exponent regions.

pub mod convolve;
pub mod error;
pub mod fracpow;
pub mod gamma;
pub mod io;
pub mod noise;
pub mod regularity;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use spectral::{EigenSystem, EllipticOperatorSpec, GridFunction, SpectralDomain};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
