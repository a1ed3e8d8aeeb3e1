//! Numerical laboratory for singular holomorphic foliations of the complex
//! projective plane and the harmonic currents they carry.
//!
//! The crate is organized around the pipeline used to study a degree-d
//! polynomial foliation:
//!
//! * [`geometry`] — foliation specs on P^2, singularity location and
//!   eigenvalue normalization;
//! * [`local_model`] — the linearized hyperbolic singularity: leaves
//!   parametrized by complex time, angular domains, exit projection and
//!   closed-form holonomy;
//! * [`hyperbolic`] — exact hyperbolic geometry, Brownian motion and the
//!   radial heat kernel on the curvature -1 plane;
//! * [`tracker`] — global leaf continuation by complex-time integration,
//!   foliation-box coverings, holonomy germs with certified radii and
//!   crossing counts;
//! * [`cocycle`] — additive cocycles along Brownian paths and the Lyapunov /
//!   entropy estimators built from them;
//! * [`dimension`] — closed-form degree constants, transversal hitting
//!   measures and local-dimension regression.
//!
//! Estimators are deterministic: every stochastic routine derives one RNG
//! stream per path from `(seed, path index)`, so results do not depend on
//! the number of worker threads.

pub mod cocycle;
pub mod dimension;
pub mod geometry;
pub mod hyperbolic;
pub mod local_model;
pub mod numeric;
pub mod report;
pub mod tracker;

pub use num_complex::Complex64;

/// Convenience alias used throughout the crate.
pub type C64 = num_complex::Complex64;
