//! Functional periodic ARMA (fpARMA) processes on a finite basis
//! discretization of a separable Hilbert space.
//!
//! - [`hilbert`]: coefficient representations, block operators, spectral tools
//! - [`model`]: model definition and the block companion algebra
//! - [`probe`]: stationarity, population covariances, dependence diagnostics
//! - [`sim`]: reproducible noise and sample-path generation
//! - [`estimate`]: Yule-Walker-type cycle operator estimation and per-season
//!   operator extraction by regularized block inversion

pub mod error;
pub mod estimate;
pub mod hilbert;
pub mod model;
pub mod presets;
pub mod probe;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use hilbert::{BasisKind, BasisSpec, BlockOp, FunctionRep, OperatorRep, SpectralDecomp};
pub use model::{FparmaModel, NoiseDistribution, NoiseSpec};
