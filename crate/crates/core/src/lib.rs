//! GNSS single point positioning with machine-learned signal weighting.
//!
//! Signals are scored by ensemble classifiers trained on six per-epoch
//! signal-quality features; activation functions turn scores into weights
//! for an iterative weighted least squares position solve.

pub mod activation;
pub mod atmosphere;
pub mod ensemble;
pub mod ephemeris;
pub mod evaluation;
pub mod features;
pub mod geodesy;
pub mod gnss;
pub mod ingest;
pub mod labeling;
pub mod pipeline;
pub mod solver;
pub mod synthetic;
