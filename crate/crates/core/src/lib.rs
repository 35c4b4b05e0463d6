//! Differentiable and stochastic layers over discrete latent structure.
//!
//! - [`numcore`]: reverse-mode tape, finite-difference checks, seeded RNG.
//! - [`simplex`]: softmax, sparsemax and entmax maps onto the simplex.
//! - [`structures`]: part-factored domains with argmax, marginal, sampling
//!   and enumeration oracles, plus incremental transition systems.
//! - [`relax`]: continuous relaxations (marginals, Sinkhorn, SparseMAP,
//!   perturbed argmax) with exact pullbacks.
//! - [`surrogate`]: straight-through style surrogate gradients.
//! - [`stochastic`]: gradient estimators for expected downstream losses.

// `!(x > 0.0)` deliberately rejects NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numcore;
pub mod relax;
pub mod simplex;
pub mod stochastic;
pub mod structures;
pub mod surrogate;

pub use error::{Error, Result};
