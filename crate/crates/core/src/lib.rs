//! Change point detection and calibration of resource schedules for a
//! multi-server queueing station.
//!
//! The crate covers the whole loop: a discrete-event simulator, snapshot
//! feature extraction, data-driven change point detection, a NARX level
//! predictor and a simulated-annealing search that uses simulation as its
//! fitness function.

pub mod annealer;
pub mod ddcpd;
pub mod error;
pub mod featurizer;
pub mod io;
pub mod narx;
pub mod pipeline;
pub mod seed;
pub mod simkit;

pub use error::{Error, Result};
