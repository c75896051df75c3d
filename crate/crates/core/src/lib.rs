//! Estimation core for automated observational causal-effect studies.
//!
//! Given a treatment table and a long-format observation panel, the crate
//! picks between generalized synthetic control and cross-fitted linear DML,
//! runs every feasible candidate, selects one by standard error with a
//! voting check, and validates the result with refutation or sensitivity
//! re-estimations.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command line
//! live in the companion `opf` crate. Enable `parallel` to fan trees, folds,
//! bootstrap replicates and candidate estimators out over rayon.

#![no_std]

extern crate alloc;
#[cfg(feature = "parallel")]
extern crate std;

pub mod cohort;
pub mod config;
pub mod dataset;
pub mod decide;
pub mod dml;
pub mod error;
pub mod estimate;
pub mod gsc;
pub mod learners;
pub mod linalg;
mod par;
pub mod preprocess;
pub mod refute;
pub mod report;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
