//! Ensembles of compact, region-specific spiking neural networks for visual
//! place recognition.
//!
//! Each expert is a small LIF/STDP network trained on a contiguous block of
//! reference places. At query time every expert sees the same spike train;
//! neurons that fire too much across the whole reference set (hyperactive
//! neurons) are ignored, and the remaining spike counts vote for places.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod expert;
pub mod imaging;
pub mod neurosim;
pub mod store;
pub mod synth;

pub use config::RunConfig;
pub use error::{Error, Result};
