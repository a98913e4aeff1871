//! Multiscale controlled jump diffusions driven by symmetric α-stable noise.
//!
//! The crate covers the full pipeline for a slow-fast controlled system
//!
//! ```text
//! dX = b(X, Y, v) ds + dL^{α₁}
//! dY = (1/ε) c(X, Y) ds + ε^{-1/α₂} dL^{α₂}
//! ```
//!
//! with cost `J^ε = E[-∫ e^{λ(s-T)} L ds + e^{λ(t-T)} g(X_T, Y_T)]`:
//!
//! - [`model`]: problem data, built-in benchmarks and a sampled assumption audit
//! - [`stable`]: Chambers–Mallows–Stuck sampling and characteristic-function oracles
//! - [`sde`]: Euler–Maruyama integrators for the slow-fast, frozen and averaged systems
//! - [`ergodic`]: invariant-measure estimation and ergodicity diagnostics
//! - [`effective`]: averaged coefficients, effective Hamiltonian, cell problems
//! - [`hjb`]: monotone schemes for the effective and two-scale nonlocal HJB equations
//! - [`value`]: Monte Carlo cost functionals
//! - [`harness`]: ε-sweeps and combined reports

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod effective;
pub mod ergodic;
pub mod error;
pub mod harness;
pub mod hjb;
pub mod model;
pub mod rng;
pub mod sde;
pub mod stable;
pub mod stats;
pub mod value;

pub use error::{Error, Result};
