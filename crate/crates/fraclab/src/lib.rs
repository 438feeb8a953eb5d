//! fraclab: a numerical laboratory for nonlocal Schrödinger operators.
//!
//! The crate builds the operator `L_K + V` from an integro-differential
//! kernel `K` of fractional order `2s` and a nonnegative potential `V`,
//! and ships the measurement machinery needed to check, at desk scale, the
//! inequalities such operators satisfy:
//!
//! - [`kernel`] — kernels between power-law ellipticity bounds, the Fourier
//!   normalization constant, and pointwise application by singular quadrature;
//! - [`weights`] — Muckenhoupt/reverse-Hölder diagnostics for potentials on
//!   explicit ball families;
//! - [`auxfunc`] — the critical-radius auxiliary function `m_V`, its growth
//!   envelopes, and the Fefferman–Phong and fractional Poincaré inequalities;
//! - [`solver`] — Galerkin discretization of the Dirichlet problem on a box,
//!   energies, nonlocal tails, and sub/supersolution classification;
//! - [`regularity`] — Caccioppoli, local-boundedness, and weak/improved
//!   Harnack checks driven by the entire series `Ξ`;
//! - [`fundsol`] — fundamental-solution estimates and their decay fits;
//! - [`mapping`] — the resolvent `S_V = (L_K + V)^{-1}`, fractional maximal
//!   and Riesz operators, weak-Lᵖ quasinorms, and the exponent-region
//!   classification for the mapping bounds;
//! - [`runner`] — the deterministic experiment front end behind the
//!   `fraclab` binary.
//!
//! Every check returns a report rather than panicking; reports serialize to
//! an append-only JSON ledger whose bytes depend only on the configuration
//! and seed.

pub mod geom;
pub mod fundsol;
pub mod grid;
pub mod kernel;
pub mod quad;
pub mod regularity;
pub mod report;
pub mod weights;

pub use geom::{BallQuery, Point};
pub use grid::{ExteriorModel, GridFunction};
pub use kernel::{KernelSpec, NormalizationConstant, Profile};
pub use report::{HarnackReport, InequalityReport, Report, WeakNormReport};
pub use weights::Weight;
pub mod auxfunc;
pub mod conv;
pub mod solver;
