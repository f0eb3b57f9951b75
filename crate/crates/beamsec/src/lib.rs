//! Simulation and library for mmWave beam prediction under adversarial
//! attack: a geometric channel generator, beam codebook rate math, a small
//! fully-connected regressor with explicit gradients, a complex-domain
//! iterative sign-gradient attack and the adversarial-training defense, plus
//! an epsilon-sweep experiment harness.

pub mod adversarial;
pub mod beamforming;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod report;
pub mod scenario;
pub mod signal;

pub use error::{BeamsecError, Result};
