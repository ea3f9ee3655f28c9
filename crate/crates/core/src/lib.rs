//! Spin-vortex-induced loop currents on finite square lattices.
//!
//! The crate covers the full pipeline: a mean-field (Hartree-Fock) Hubbard
//! solution for a prescribed spin-vortex texture, constrained minimization
//! of the dressing phase field over integer winding sectors, loop-current
//! distributions with external feed currents, magnetic coupling and
//! transition-dipole observables, and feed-current spectrum sweeps for the
//! three-qubit layout.

pub mod chi;
pub mod config;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod meanfield;
pub mod observables;
pub mod pipeline;
pub mod qubit;
pub mod verify;

pub use error::{Error, Result};
