//! Regularization and cluster machinery for Coulomb many-electron
//! eigenfunctions, together with Monte-Carlo estimators for the one- and
//! two-electron densities built from them.
//!
//! Units: the Hamiltonian is `-Δ + V` with no factor `1/2` on the kinetic
//! term. With this convention the one-electron hydrogenic ground state for
//! charge `Z` is `exp(-Z|x|/2)` with eigenvalue `-Z²/4`, which differs from
//! the usual atomic-units values by these factors of two.
//!
//! Module map:
//!
//! * [`system`]: nuclei, electron configurations, the potential `V` and the
//!   Schrödinger residual.
//! * [`regularization`]: the factors `F`, `F₁`, the factorization
//!   `ψ = exp(F - F₁) ψ₁` and the coefficients of the transformed operator.
//! * [`cluster`]: pair index sets, cluster selections and their equivalence
//!   classes, smooth cutoffs and the partition of unity, support certificates.
//! * [`transform`]: orthogonal frames extracting the scaled cluster centre of
//!   mass.
//! * [`wavefunction`]: analytic wavefunction models with decay certificates.
//! * [`density`]: Monte-Carlo estimators, derivative probes and decay fits.

// `!(x > 0.0)` style checks reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod density;
mod error;
pub mod fd;
pub mod geom;
pub mod mc;
pub mod regularization;
pub mod system;
pub mod transform;
pub mod wavefunction;

pub use error::{Error, Result};
pub use geom::Vec3;
pub use system::{Configuration, MolecularSystem, Nucleus};
