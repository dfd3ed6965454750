//! Estimators of the conditional average treatment effect (CATE) and of
//! individualized treatment rules (ITRs) for high-dimensional data.
//!
//! The crate is `no_std` and only needs `alloc`. It contains every numerical
//! piece of the benchmark: penalized regression, tree ensembles, the super
//! learner, the CATE strategies, treatment-effect-modifier variable
//! importance (TEM-VIP) filtering, the simulation designs and the evaluation
//! metrics. IO, timing and orchestration live in the `itr-bench` crate.
//!
//! Matrices are `ndarray` arrays with one row per observation.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cate;
pub mod dgp;
mod error;
pub mod metrics;
pub mod penalized;
pub mod rng;
pub mod stats;
pub mod super_learner;
pub mod temvip;
pub mod trees;

pub use error::{Error, Result};
