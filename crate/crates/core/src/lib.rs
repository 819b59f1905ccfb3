//! Envelope models for joint mean and covariance regression when the number
//! of features is large relative to the number of observations.
//!
//! The response `Y` (`n × p`) is assumed to vary with covariates `X`
//! (`n × q`) only inside an `s`-dimensional subspace spanned by a
//! semi-orthogonal basis `V`; off that subspace the data are isotropic noise.
//! The basis is estimated by Monte Carlo EM: the E-step runs a Gibbs sampler
//! for a linear covariance regression on the projected data `YV`, the M-step
//! maximizes the resulting marginal log-likelihood over the Stiefel manifold.
//!
//! Modules:
//! - [`stiefel`]: Cayley-transform curvilinear search on the Stiefel manifold.
//! - [`objectives`]: marginal log-likelihoods for `V` and their gradients.
//! - [`covreg`]: Gibbs sampler for the projected covariance regression.
//! - [`mcem`]: the EM driver, rank selection, initialization, fitted covariances.
//! - [`eval`]: simulation model, Stein's loss, principal angles, experiments.
//! - [`summarize`]: posterior eigen-summaries on contrast-rotated bases.

pub mod covreg;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mcem;
pub mod objectives;
pub mod stiefel;
pub mod summarize;

pub use error::{Error, Result};
pub use stiefel::{OptimizerConfig, StiefelBasis};
