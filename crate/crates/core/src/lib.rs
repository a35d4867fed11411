//! Qudit channel simulation, standard process tomography and turbulence
//! phase-screen channels for slit-encoded photonic qudits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod error;
pub mod mub;
pub mod numkernel;
pub mod qudit;
pub mod tomography;
pub mod turbulence;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
