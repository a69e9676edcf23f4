//! Discrete-time feedback stabilization of photon-number states in a lossy
//! microwave cavity.
//!
//! The field lives in a truncated Fock space and is represented by real
//! symmetric density matrices. Dispersive atoms probe the photon number
//! through a Ramsey interferometer ([`measurement`]), a recursive estimator
//! turns detector clicks into a state estimate ([`filter`]), and a Lyapunov
//! law picks the coherent displacement injected each cycle ([`controller`]).
//! [`truth`] simulates the actual cavity, and [`harness`] runs closed-loop
//! trajectories, ensembles and the latency benchmark.

pub mod controller;
pub mod error;
pub mod filter;
pub mod fock;
pub mod harness;
pub mod measurement;
pub mod truth;

pub use controller::{compute_control, Branch, Control, ControlParams};
pub use error::{Error, Result};
pub use filter::{FilterState, ImperfectionParams, Outcome, QuantumFilter};
pub use fock::{DensityMatrix, Displacement, Displacer, FockDim, RelaxationParams};
pub use harness::config::{ExperimentConfig, Mode};
pub use measurement::{AtomState, DephasingModel, KrausPair, PhaseSchedule};

/// Version string embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
