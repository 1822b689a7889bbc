//! Noise-level-aware recovery of functions from gridded point samples.
//!
//! The estimator fits piecewise polynomials by discrete least squares on every
//! dyadic level, expresses the level-to-level corrections in per-cube
//! orthonormal bases, and hard-thresholds those coefficients with a schedule
//! that switches on at the level where the noise starts to dominate.
//!
//! Module map:
//!
//! - [`grid_obs`]: sample grids and the noisy observation model.
//! - [`polybasis`]: polynomial spaces, discretely orthonormal local bases, local fits.
//! - [`multiscale`]: dyadic cubes, level projections and coefficient vectors.
//! - [`shrinkage`]: threshold schedule and the end-to-end estimator.
//! - [`analysis`]: error norms, smoothness diagnostics, rate fits and risk curves.
//! - [`oracles`]: bundled targets, lower-bound fixtures and numeric validators.

pub mod analysis;
pub mod error;
pub mod grid_obs;
pub mod multiscale;
pub mod oracles;
pub mod polybasis;
pub mod quadrature;
pub mod rng;
pub mod shrinkage;

pub use error::{Error, Result};
pub use grid_obs::{build_grid, observe, FunctionOracle, NoiseKind, ObservationSet, RealFunction, SampleGrid};
pub use multiscale::{decompose, reconstruct, CoefficientVector, DyadicCube, MultiscaleDecomposition, PiecewisePoly};
pub use shrinkage::{estimate, EstimatorConfig, ThresholdSchedule};
