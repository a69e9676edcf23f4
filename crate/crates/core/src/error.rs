use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("displacement amplitude {alpha} outside the representable range |alpha| <= {limit}")]
    AmplitudeOutOfRange { alpha: f64, limit: f64 },

    #[error("relaxation step too large: kappa*T_a*(n_max+1) = {0:.3e} exceeds 0.05")]
    StepTooLarge(f64),

    #[error("photon number {n} outside the truncated space (n_max = {n_max})")]
    PhotonNumberOutOfRange { n: usize, n_max: usize },

    #[error("measurement outcome `{outcome}` has vanishing probability {probability:.3e}")]
    ZeroProbabilityOutcome { outcome: char, probability: f64 },

    #[error("detector outcome `u` is impossible with eta_a = eta_d = 1")]
    ImpossibleNoClick,

    #[error("not a valid density matrix: {0}")]
    InvalidState(String),

    #[error("state lost positivity: smallest eigenvalue {min:.3e} below tolerance {tolerance:.3e}")]
    NegativeEigenvalue { min: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no in-flight sample left to detect")]
    PipelineEmpty,

    #[error("no qualifying quantum jumps found in the trajectories")]
    NoJumpsFound,

    #[error("cycle {cycle}: {source}")]
    AtCycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Csv { .. } | Error::Json { .. } | Error::Format { .. } => 4,
            Error::AtCycle { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub(crate) fn at_cycle(self, cycle: usize) -> Error {
        Error::AtCycle {
            cycle,
            source: Box::new(self),
        }
    }
}
