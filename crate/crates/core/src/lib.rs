//! Test-time training and radius refinement for machine-learned interatomic
//! potentials, with the tooling to measure distribution shift.
//!
//! Numerical kernels are generic over the scalar; the aliases below fix it
//! to `f64` or `f32`.

pub mod benchmark;
pub mod config;
pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod linear_ttt;
pub mod md;
pub mod metrics;
pub mod model;
pub mod potentials;
pub mod profile;
pub mod rr;
pub mod scalar;
pub mod species;
pub mod stats;
pub mod structure;
pub mod training;
pub mod ttt;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Structure64 = structure::Structure<f64>;
pub type Structure32 = structure::Structure<f32>;
pub type Sample64 = structure::Sample<f64>;
pub type LabeledStructure64 = structure::LabeledStructure<f64>;
pub type RadiusGraph64 = graph::RadiusGraph<f64>;
pub type Spectrum64 = graph::Spectrum<f64>;
pub type PairParams64 = potentials::PairParams<f64>;
pub type ReferenceOracle64 = potentials::ReferenceOracleParams<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
