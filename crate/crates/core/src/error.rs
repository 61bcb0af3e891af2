use thiserror::Error;

use crate::lattice::Site;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("ball radius {radius} exceeds capacity {max}")]
    CapacityExceeded { radius: u32, max: u32 },
    #[error("window radius {window_radius} too small, need at least {required}")]
    WindowTooSmall { window_radius: u32, required: u32 },
    #[error("complement has {components} components, a circuit needs exactly 2")]
    NotACircuit { components: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("site {0} is not in the ball")]
    SiteOutsideBall(Site),
    #[error("state string has length {got}, ball has {expected} sites")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid state character {0:?}")]
    InvalidState(char),
    #[error("probability {0} is not in [0, 1]")]
    InvalidProbability(f64),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("revealed configuration is not compatible with the one-arm event to radius {radius}")]
    IncompatibleConditioning { radius: u32 },
    #[error("exact enumeration over {unrevealed} free sites exceeds the limit of {limit}")]
    CapacityExceeded { unrevealed: usize, limit: usize },
    #[error("no acceptance after {attempts} attempts")]
    RetryLimitExceeded { attempts: u64 },
    #[error("conditional probability {value} fell below p = {p}")]
    FkgViolation { value: f64, p: f64 },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    #[error("all sites of the ball are already revealed")]
    Exhausted,
    #[error("radii must satisfy k <= m <= n, got ({k}, {m}, {n})")]
    InvalidRadii { k: u32, m: u32, n: u32 },
    #[error("circuit invariant violated: {0}")]
    CircuitInvariantViolation(String),
    #[error("coupled configuration below the unbiased one at {0}")]
    DominanceViolation(Site),
    #[error("exploration frontier reopened after the stopping time at step {0}")]
    FrontierReopened(usize),
    #[error("replica {replica} of seed {seed}: {source}")]
    Replica {
        seed: u64,
        replica: u64,
        source: Box<CouplingError>,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("exact enumeration over {sites} sites exceeds the limit of {limit}")]
    CapacityExceeded { sites: usize, limit: usize },
    #[error("total variation {tv} exceeds the dual-arm bound {bound}")]
    BoundViolation { tv: f64, bound: f64 },
    #[error("cannot merge statistics for different experiments")]
    MergeMismatch,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}
