//! Dependent random partitions indexed by time or by abstract covariates.
//!
//! A stick-breaking prior with Gaussian-process thresholds couples the
//! cluster assignments of a fixed set of objects across locations. The
//! crate provides the prior, kernels over locations, collapsed likelihoods
//! for real-valued and relational data, an MCMC sampler and data utilities.

pub mod datasets;
pub mod error;
pub mod kernels;
pub mod likelihoods;
pub mod mcmc;
pub mod partition;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
