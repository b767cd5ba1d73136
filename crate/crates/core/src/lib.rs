//! Particle simulation of the two-dimensional Vlasov-Poisson system with the
//! unstable trapping potential `-|x|^2/2`,
//!
//! ```text
//! d_t f + v . grad_x f + x . grad_v f - mu grad_x phi . grad_v f = 0,   Lap phi = rho(f),
//! ```
//!
//! together with the diagnostics that measure its late-time behaviour:
//! density decay, normalized stable averages, force-field profiles, modified
//! scattering coordinates and the scattering-state conservation laws.

pub mod config;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod phase;
pub mod poisson;
pub mod reduce;
pub mod sampling;
pub mod scalar;
pub mod scattering;

pub use config::{GridMode, SimConfig};
pub use error::{Error, Result};
pub use scalar::{Real, Vec2};

pub type Particle = ensemble::Particle<f64>;
pub type ParticleEnsemble = ensemble::ParticleEnsemble<f64>;
