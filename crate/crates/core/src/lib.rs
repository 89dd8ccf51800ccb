//! Exact-diagonalization laboratory for a few-level system coupled to a
//! finite thermal bath.
//!
//! The crate assembles the composite Hamiltonian, diagonalizes it, evolves
//! the product initial state unitarily and extracts the infinite-time
//! (diagonal-ensemble) reduced state of the system. Its ground-state
//! probability is compared with the Gibbs prediction, and the residue
//! structure of the Laplace-transform identity that the two would have to
//! satisfy is reported numerically.
//!
//! Module map:
//!
//! * [`hilbert`]: product-space indexing, Hamiltonian assembly, density
//!   matrices, partial trace.
//! * [`bath`]: bath spectra, Gibbs weights, density of states.
//! * [`dynamics`]: eigendecomposition, time evolution, diagonal ensemble,
//!   `f_j` overlap weights, finite time averages.
//! * [`laplace`]: Gibbs prediction, deviation metrics, partition models and
//!   the pole/residue report.
//! * [`oracles`]: independent brute-force reference computations.
//! * [`config`] and [`runner`]: experiment configuration and orchestration
//!   behind the `thermaleq` binary.

pub mod bath;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod laplace;
pub mod oracles;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};

/// Dense complex matrix used for every operator in the crate.
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;

pub use num_complex::Complex64;

/// Crate version embedded in every output header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
