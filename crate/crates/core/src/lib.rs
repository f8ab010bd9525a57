//! Shape reconstruction for electrical impedance tomography from point
//! measurements of the potential.
//!
//! The unknown inclusion is a level set on a structured P1 mesh of the unit
//! square. Each iteration solves the state problems, adjoint problems with
//! point sources, evaluates the distributed shape derivative and moves the
//! level set along an H1-type descent field.

pub mod adjoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod forward;
pub mod inversion;
pub mod levelset;
pub mod mesh;
pub mod par;
pub mod shape_gradient;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
