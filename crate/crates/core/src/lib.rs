//! Transfer-matrix analysis of one-dimensional periodic dielectric stacks
//! with a single defect layer: band structure, defect modes, finite-stack
//! reflection and transmission, the pole/zero pair of the reflection
//! coefficient generated by a defect mode, and the supercell picture.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bands;
pub mod cli;
pub mod defect;
pub mod error;
pub mod fit;
pub mod medium;
pub mod polezero;
pub mod scattering;
pub mod supercell;
pub mod transfer;
pub mod verify;

pub use error::{Error, Result};
