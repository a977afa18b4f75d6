//! Lagrangian schemes for Wasserstein gradient flows.
//!
//! * [`lagrangian`]: mass grids, monotone 1D states, inverse distribution
//!   functions and the exact 1D `W_2` distance.
//! * [`functionals`]: discrete entropies, potentials, interactions and the
//!   fourth-order Fisher/Dirichlet surrogates.
//! * [`jko1d`]: implicit minimizing-movement stepping in 1D.
//! * [`blob`]: deterministic blob particles for aggregation-diffusion.
//! * [`fdks`]: implicit finite differences for 1D Keller-Segel in
//!   self-similar variables.
//! * [`mesh2d`]: moving triangle meshes on the unit square.
//! * [`io`]: CSV/JSON serialization of densities and states.
//! * [`cli`]: configuration-driven experiment runner.

// `!(a > b)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod blob;
pub mod cli;
pub mod error;
pub mod fdks;
pub mod functionals;
pub mod io;
pub mod jko1d;
pub mod lagrangian;
pub mod linalg;
pub mod mesh2d;
pub mod profiles;

pub use error::{Error, Result};
