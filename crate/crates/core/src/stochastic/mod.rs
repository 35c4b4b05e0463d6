//! Gradient estimators for `E_{Z∼Pr(·|s)}[g(Z)]` with respect to the scores.
//!
//! - exact: [`explicit_marginal`] (enumeration), [`sparsemax_marginal`] and
//!   [`sparsemap_marginal`] (sparse distributions, exact over their support);
//! - score function: [`sfe_gradient`] with baselines, [`sum_and_sample`];
//! - Gumbel machinery: [`gumbel_max_sample`], [`gumbel_softmax`],
//!   [`st_gumbel`], [`perturb_and_map`];
//! - mixed random variables: [`rectified_sample`], [`gaussian_sparsemax_sample`].
//!
//! Every estimator reports how many times the downstream function ran.

mod downstream;
mod gumbel;
mod mixed;
mod sfe;
mod sparse;

pub use downstream::{Baseline, BaselineConfig, DownstreamFn, EstimatorReport};
pub use gumbel::{
    gumbel_max_sample, gumbel_softmax, gumbel_softmax_with_noise, perturb_and_map, st_gumbel,
};
pub use mixed::{gaussian_sparsemax_sample, rectified_sample, RectifiedBase};
pub use sfe::{explicit_marginal, record_log_prob, sfe_gradient, sfe_surrogate, sum_and_sample};
pub use sparse::{sparsemap_marginal, sparsemax_marginal};
