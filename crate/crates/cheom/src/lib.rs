//! Conditioned hierarchical equations of motion (cHEOM) for quantum systems
//! strongly coupled to monitored lossy bosonic modes.
//!
//! The crate is organized around the method: [`engine`] propagates the
//! hierarchy of conditioned auxiliary atom-space density matrices under
//! homodyne / heterodyne / photodetection monitoring with optional
//! measurement feedback; [`oracle`] holds the exact full atom+cavity
//! stochastic solvers used as ground truth on shared noise paths;
//! [`operators`] is the dense complex operator algebra underneath;
//! [`measures`] evaluates entropy / mutual information / negativity /
//! spin squeezing on conditioned states; [`noise`] provides seedable,
//! replayable stochastic drivers; [`experiments`] and [`config`] build
//! and run complete scenarios.

pub mod config;
pub mod engine;
pub mod experiments;
pub mod measures;
pub mod noise;
pub mod operators;
pub mod oracle;

pub use operators::{C64, HilbertSpaceLayout, OperatorMatrix};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no operands")]
    NoOperands,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown factor label `{0}`")]
    UnknownLabel(String),
    #[error("matrix is not Hermitian (defect {defect:.3e} exceeds tolerance {tol:.3e})")]
    NotHermitian { defect: f64, tol: f64 },
    #[error("not a state: {0}")]
    NotAState(String),
    #[error("undefined squeezing direction: |<Jx>|^2 + |<Jy>|^2 below threshold")]
    UndefinedSqueezingDirection,
    #[error("auxiliary index count overflow: {0}")]
    IndexCountOverflow(String),
    #[error("index ({0}) not retained at this truncation depth")]
    IndexNotRetained(String),
    #[error("first-level auxiliaries required (k_max >= 1)")]
    FirstLevelRequired,
    #[error("integration diverged: reduce dt (tr rho^(0,0) = {0:.3e})")]
    Diverged(f64),
    #[error("feedback singular: |<Jx>| below threshold")]
    FeedbackSingular,
    #[error("feedback operator must be Hermitian")]
    FeedbackNotHermitian,
    #[error("feedback requires a homodyne-monitored mode (mode {0})")]
    FeedbackModeNotHomodyne(usize),
    #[error("jump from empty mode: jump requested while rate < 1e-12")]
    JumpFromEmptyMode,
    #[error("Stratonovich path implemented single-mode only")]
    MultimodeStratonovich,
    #[error("Fock cutoff too small: top-level population {pop:.3e} on mode {mode}")]
    CutoffTooSmall { mode: usize, pop: f64 },
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("noise path decode error: {0}")]
    NoisePathDecode(String),
    #[error("dynamic-lambda feedback requires conditioned quantities; only schedules are valid here")]
    DynamicLambdaInDeterministicRun,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
