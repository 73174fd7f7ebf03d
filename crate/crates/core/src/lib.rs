//! Max-min rate and energy-efficiency optimization for multicell MISO
//! broadcast networks assisted by reconfigurable intelligent surfaces, with
//! NOMA clusters and improper Gaussian signaling.
//!
//! The crate models the composite BS-RIS-user channel, evaluates NOMA/TIN
//! achievable rates in the real-decomposition domain, builds the concave
//! surrogates that make the alternating max-min problems convex, and drives
//! them with a built-in barrier solver. The `experiment` module adds a
//! paired Monte Carlo harness over the usual comparison schemes.

pub mod channel;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod rates;
pub mod ris;
pub mod solver;
pub mod surrogate;

pub use model::{
    ChannelSet, CovSet, FeasibilitySet, NetworkConfig, RateReport, ReflectState, Signaling,
};
