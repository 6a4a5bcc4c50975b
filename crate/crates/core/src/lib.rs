//! Quantum walks on the integer lattice, realized as extended CMV matrices
//! built from Verblunsky coefficients α_n ∈ 𝔻, together with the transfer
//! cocycles, trace maps, Floquet fibers, and spreading bounds attached to them.

pub mod error;
pub mod artifact;
pub mod bounds;
pub mod cmv;
pub mod config;
pub mod cocycle;
pub mod coin;
pub mod dynamics;
pub mod floquet;
pub mod mat2;
pub mod selfcheck;
pub mod tracemap;
pub mod verblunsky;

pub use error::{Error, Result};
