//! File formats, plots and the command line around `opf-core`.
//!
//! Inputs are a treatment table CSV (`unit_id,treatment_date`), a long
//! observation CSV and a JSON study config. A run writes `result.json`,
//! per-cohort trend charts and, when synthetic control ran, its fit chart.

pub mod error;
pub mod ingest;
pub mod output;
pub mod pipeline;
pub mod plot;

pub use error::{OpfError, Result};
