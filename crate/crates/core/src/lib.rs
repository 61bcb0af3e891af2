//! Site-by-site coupling of one-arm-conditioned critical site percolation on
//! the triangular lattice.
//!
//! The crate is organized bottom-up: [`lattice`] geometry, [`configuration`]
//! colorings, [`connectivity`] engines, the conditional-law [`oracle`], the
//! exploration [`coupling`], and Monte-Carlo/exact [`estimator`]s.

pub mod configuration;
pub mod connectivity;
pub mod coupling;
pub mod error;
pub mod estimator;
pub mod lattice;
pub mod numeric;
pub mod oracle;
pub mod rng;
pub mod verification;

pub use configuration::{Color, PartialConfig, State, CRITICAL_P};
pub use coupling::{run_coupling, CouplingEngine, CouplingOutcome};
pub use error::{ConfigError, CouplingError, EstimatorError, LatticeError, OracleError};
pub use lattice::{Ball, Circuit, Site};
pub use oracle::{ArmOracle, BackendMode, CondProb, CondQuery, OracleBackend};
pub use rng::{Stream, UniformField};
