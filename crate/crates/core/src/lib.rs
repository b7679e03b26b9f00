//! Mobility hub demand modelling on top of a market-level mode choice model.
//!
//! The pipeline runs from survey geometry and pre-estimated taste vectors,
//! through nested-logit calibration of hub parameters against observed usage,
//! to before/after impact metrics and ranking of candidate hub sites.

pub mod calibration;
pub mod choice;
pub mod error;
pub mod geo;
pub mod hub;
pub mod impact;
pub mod io;
pub mod optimize;
pub mod siting;

pub use error::{Error, Result};
