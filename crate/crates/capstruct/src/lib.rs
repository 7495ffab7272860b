//! Panel econometrics toolkit for capital-structure adjustment studies.
//!
//! The library estimates partial-adjustment leverage models with
//! macroeconomic-state interactions on unbalanced firm-year panels, by
//! fixed-effects mean regression and by fixed-effects panel quantile
//! regression over a quantile grid, with Hausman and Wald specification
//! tests. A synthetic-data generator with known parameters backs every
//! estimator's validation, and a CLI drives the full study pipeline.

pub mod adjustment;
pub mod error;
pub mod exec;
pub mod features;
mod ipm;
pub mod mean_panel;
pub mod numerics;
pub mod panel_quantreg;
pub mod panel_store;
pub mod quantreg;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};
