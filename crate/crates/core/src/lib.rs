//! Risk-constrained linear-quadratic control of mean-field multi-agent
//! systems: Riccati-based policy synthesis, analytic cost and risk
//! evaluation, dual ascent on the risk multiplier, and an n-player
//! simulator for checking all of it empirically.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dual;
pub mod error;
pub mod linalg;
pub mod model;
pub mod risk;
pub mod scenario;
mod serde_helpers;
pub mod sim;
pub mod synthesis;
