//! Time-tag level simulation and analysis of a continuous-wave pumped
//! photon-pair source analyzed by two passive unbalanced Mach-Zehnder
//! interferometers.
//!
//! The crate is organized around one parameter record
//! ([`params::ExperimentParams`]) that drives both sides of every check:
//!
//! - [`physics`] holds the closed-form expectations (pair rate, joint
//!   path/port table, three-peak histogram, fringe, sinc^2 tuning curve);
//! - [`sim`] draws seeded time-tag streams through the emission, routing,
//!   dark-count, dead-time and quantization stages;
//! - [`coincidence`] correlates two streams into lag histograms;
//! - [`estimators`] applies the rate corrections and visibility
//!   definitions;
//! - [`fit`] provides the shared nonlinear least-squares solver and the
//!   model fitters;
//! - [`tagfile`] reads and writes the binary stream format.

pub mod coincidence;
pub mod error;
pub mod estimators;
pub mod fit;
pub mod params;
pub mod physics;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod tagfile;

pub use error::{Error, Result};
pub use params::ExperimentParams;
