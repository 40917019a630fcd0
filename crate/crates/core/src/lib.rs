//! Finite-difference laboratory for explicit super-time-stepping schemes
//! (RKC, RKL, RKG) on the Heston and Black–Scholes pricing PDEs.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: uniform, sinh and cubic stretched 1-D grids
//! - [`operator`]: nine-point spatial operators with selectable upwinding
//! - [`sts`]: stabilised explicit integrators and their stability polynomials
//! - [`reference`]: banded Crank–Nicolson/Rannacher and TR-BDF2 solvers
//! - [`spectral`]: Gershgorin bounds and dense spectra
//! - [`experiments`]: payoffs, error and oscillation metrics, study drivers
//! - [`cli`]: JSON run configuration and command dispatch

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod lattice;
pub mod operator;
pub mod reference;
pub mod sparse;
pub mod spectral;
pub mod sts;

pub use error::{Error, Result};
pub use grid::{Grid1D, StretchKind, StretchSpec};
pub use lattice::Lattice;
pub use operator::{BsParams, HestonParams, StencilOperator, UpwindPolicy};
pub use sts::{SchemeFamily, StageCoefficients};
