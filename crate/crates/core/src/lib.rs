//! Continuous-time episodic learning for linear-convex control.
//!
//! The crate simulates `dX = (A X + B a) dt + dW` with unknown `θ = (A, B)`,
//! learns `θ` through a matrix-normal posterior, synthesizes greedy feedback
//! policies (Riccati for quadratic costs, a scalar HJB solver for
//! entropy-regularized costs) and runs phased exploration with greedy
//! exploitation, tracking regret and its decomposition.
//!
//! | module | role |
//! |---|---|
//! | [`model`] | parameters, cost families, entropy conjugate pair |
//! | [`sde`] | seeded Euler–Maruyama episodes and Monte Carlo values |
//! | [`estimator`] | posterior sufficient statistics, MAP and truncation |
//! | [`policy`], [`riccati`], [`hjb`] | exploration and greedy policies |
//! | [`pege`] | the phased learning loop and its regret ledger |
//! | [`diagnostics`] | Orlicz-norm and Bernstein-tail diagnostics |
//! | [`experiment`] | config-driven experiments behind the `pege` binary |

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod hjb;
pub mod model;
pub mod pege;
pub mod policy;
pub mod riccati;
pub mod sde;

pub use error::{Error, Result};
