//! Scalar image velocimetry: reconstruct a 2D incompressible velocity field
//! from a passive scalar it advects.

pub mod adjoint;
pub mod cli;
pub mod error;
pub mod forward;
pub mod harness;
pub mod optimizer;
pub mod recovery;
pub mod snapshot;
pub mod spectral;
pub mod verify;

pub use error::{Result, SivError};
