//! Distributed nonconvex optimization built around a single linearized
//! primal-dual proximal iteration.
//!
//! The crate is split the same way a run is assembled:
//!
//! * [`topology`] builds graphs, mixing matrices and their spectra.
//! * [`mixing`] applies polynomials of `H = P ⊗ I_d`, either through the
//!   simulated network ([`mixing::Network`]) or densely.
//! * [`problems`] holds the local objectives.
//! * [`engine`] runs the iteration, as a dense reference or node by node.
//! * [`variants`] and [`tuning`] produce configurations.
//! * [`diagnostics`] evaluates gaps and Lyapunov functions.
//! * [`harness`] drives experiments, baselines and file formats.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod harness;
pub mod mixing;
pub mod problems;
pub mod stacked;
pub mod topology;
pub mod tuning;
pub mod variants;

pub use error::{Result, UppError};
pub use stacked::Stacked;
