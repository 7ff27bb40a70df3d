//! Interacting-particle laboratory for measure-dependent (McKean–Vlasov)
//! semilinear stochastic evolution equations on a truncated Hilbert space.
//!
//! The crate is organised bottom-up:
//!
//! * [`hilbert`]: state vectors and dense operators in a fixed orthonormal basis.
//! * [`semigroup`]: generators of type `G(M, alpha)`, matrix exponentials,
//!   resolvents, Yosida approximations and the divergence-form generator.
//! * [`noise`]: Q-Wiener increments from counter-based streams.
//! * [`measure`]: empirical measures, phi-norms and the assignment bound
//!   for the measure metric.
//! * [`dynamics`]: the exponential Euler particle scheme, the Picard
//!   iteration on the law and moment estimators.
//! * [`experiments`]: configuration, convergence studies and CSV reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod hilbert;
pub mod measure;
pub mod noise;
pub mod semigroup;

pub use error::{Error, Result};
