//! Solvability of the asymptotic-integration problem for perturbed
//! second-order linear difference equations
//!
//! ```text
//! Δ(r_{n-1} Δy_{n-1}) = (q_n + σ_n) y_n
//! ```
//!
//! and numerical construction of the perturbed fundamental system when the
//! problem is solvable.

pub mod constructor;
pub mod diagnostics;
pub mod error;
pub mod fss;
pub mod problem;
pub mod sequence;
pub mod series;
pub mod solvability;
pub mod sweep;
pub mod tail;

pub use error::{HwError, Result};
