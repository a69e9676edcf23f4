//! Experiment orchestration on top of the physics modules.

pub mod bench;
pub mod config;
pub mod ensemble;
pub mod output;
pub mod stats;
pub mod trajectory;
