//! Spatial inhomogeneous random graphs.
//!
//! Vertices carry a location in `R^d` and a real weight; each pair is joined
//! independently with probability `kappa(distance, w_i, w_j)` for a symmetric
//! connection function `kappa`. The crate generates the finite blown-up
//! ensembles (including the GIRG, hyperbolic, continuum scale-free
//! percolation and weight-dependent random connection specializations),
//! samples the infinite Poisson limit restricted to a ball, and ships the
//! statistics needed to compare the two: rooted-neighborhood histograms,
//! mixed-Poisson degree oracles, clustering measures, typical distances, and
//! a spatial/graph coupling diagnostic.
//!
//! The numeric core is generic over the scalar type (see [`scalar::Real`]);
//! the aliases below fix `f64`, which is what the CLI and experiment harness
//! use.

pub mod experiments;
pub mod generator;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod neighborhoods;
pub mod numeric;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod weights;

/// Double-precision aliases for the core types.
pub type BoxSpec = geometry::BoxSpec<f64>;
pub type PointCloud = geometry::PointCloud<f64>;
pub type Metric = geometry::Metric<f64>;
pub type WeightLaw = weights::WeightLaw<f64>;
pub type WeightVector = weights::WeightVector<f64>;
pub type KernelSpec = kernels::KernelSpec<f64>;
pub type SpatialGraph = generator::SpatialGraph<f64>;
