//! Solver for time-dependent second-order mean field games with local
//! couplings on the 2-torus.
//!
//! The game is discretized by an upwind finite-difference scheme whose
//! optimality system is the discrete MFG system; the resulting convex
//! problem over (density, flux) is solved with a primal-dual splitting
//! iteration. Each iteration solves one symmetric positive definite
//! linear system, for which this crate provides conjugate gradient and
//! BiCGStab solvers together with a semi-coarsened geometric multigrid
//! preconditioner.

pub mod coupling;
pub mod cp;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod multigrid;
pub mod ops;

pub use coupling::CouplingSpec;
pub use cp::{CpConfig, LinearSolverKind, MfgSolution, PrecondKind};
pub use error::MfgError;
pub use grid::{FluxField, GridSpec, ScalarField};
