//! Active beam-wander correction for single-mode-fiber free-space receivers.
//!
//! The crate models a two-mirror / two-PSD receiver:
//!
//! - [`optics`]: ray geometry from mirror tilts to collimator incidence and PSD
//!   readings, closed-form Gaussian fiber-coupling efficiency and a brute-force
//!   overlap-integral oracle.
//! - [`turbulence`]: seeded inverse-spectral synthesis of beam-wander series,
//!   averaged-periodogram estimation and parametric site profiles.
//! - [`detect`]: photodiode power and photon-pair counting models.
//! - [`autocouple`]: random, angle and position search stages that bring a
//!   misaligned beam into the fiber.
//! - [`control`]: decoupled dual-mirror PID stabilization.
//! - [`sim`]: the scenario engine tying everything to a common clock.

pub mod autocouple;
pub mod control;
pub mod csv;
pub mod detect;
pub mod error;
pub mod optics;
pub mod sim;
pub mod turbulence;

pub use error::{Error, Result};
