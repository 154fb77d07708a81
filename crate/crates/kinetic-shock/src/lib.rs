//! Small-amplitude kinetic shock profiles for relaxation systems and the
//! hard-sphere Boltzmann equation.

// NaN-rejecting `!(x > 0)` checks and index loops over coupled arrays are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bvp;
pub mod chapman_enskog;
pub mod cli;
pub mod collision;
pub mod config;
pub mod error;
pub mod fixed_point;
pub mod galerkin;
pub mod linalg;
pub mod linear_solver;
pub mod macro_micro;
pub mod ns_profile;
pub mod parallel;
pub mod pipeline;
pub mod relaxation;
pub mod tolerances;
pub mod velocity_space;

pub use error::{Error, Result};
