//! Numerics for a quantum particle source: particles are emitted into a fixed
//! state `φ` at a rate controlled by a coupling `λ` (bosons for `λ > 0`,
//! fermions for `λ < 0`) and then move under a one-particle Hamiltonian `H`.
//!
//! The modules follow the structure of the problem:
//!
//! * [`lattice`]: grids, unitary Fourier transform, Hamiltonians, regions.
//! * [`overlap`]: the free overlap `m(t) = ⟨φ, e^{-iHt} φ⟩` and its `L¹` norm `τ`.
//! * [`growth`]: the scalar Volterra equation behind `N(t)` and regime classification.
//! * [`propagator`]: grid trajectories, low-rank densities, local traces.
//! * [`spectral`]: eigenvalues of `iH + λ P_φ`, root counting, the quartic route.
//! * [`wigner`]: Wigner transforms and the semiclassical limit.

pub mod error;
pub mod growth;
pub mod lattice;
pub mod overlap;
pub mod propagator;
pub mod quad;
pub mod spectral;
pub mod wigner;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
