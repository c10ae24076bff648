//! Simulation of ensembles of critical branching random walks, their
//! Brownian-snake scaling limits, and statistical checks that tie the two
//! together.

pub mod conditioned;
pub mod ensemble;
pub mod error;
pub mod ise;
pub mod law;
pub mod limit;
pub mod rng;
pub mod stats;
pub mod tree;
pub mod verify;

pub use error::{Error, Result};
pub use law::{LawSpec, OffspringLaw, StepLaw};
pub use tree::{LayeredSampler, OccupationMeasure, TreeSampler};
