//! Large-system analysis of posterior-mean multiuser detection for randomly
//! spread CDMA, with a Monte Carlo harness for checking the decoupling
//! predictions on finite systems.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constellation;
pub mod error;
pub mod mc_sim;
pub mod quadrature;
pub mod replica_solver;
pub mod scalar_channel;
pub mod spectral;
pub mod validate;

pub use constellation::{
    ChannelKind, Constellation, ConstellationKind, DetectorPreset, DetectorSpec, PostulatedNoise,
    SnrAtom, SnrProfile, StandardConstellation,
};
pub use error::{Error, Result};
pub use quadrature::Quadrature;
pub use replica_solver::{FixedPointSolution, SolverOptions, SystemSpec};
