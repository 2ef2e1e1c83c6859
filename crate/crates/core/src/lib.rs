//! Identification and mapping of forced oscillation modes in multi-rate
//! phasor and point-on-wave measurements.
//!
//! The crate is organized along the analysis pipeline:
//!
//! - [`ingest`]: channel data model, CSV layout, validation, windowing.
//! - [`spectral`]: detrending, Welch / Yule-Walker PSDs, spectrograms,
//!   cross-spectral matrices, Hilbert envelopes, band-energy series.
//! - [`modal`]: singular-value curves, mode counting, mode frequency and shape.
//! - [`aliasing`]: alias folding and multi-rate true-frequency recovery.
//! - [`energy`]: mode-energy percentage, scenario labels, correlation with
//!   plant output, spatial heatmaps.
//! - [`synth`]: synthetic networks with known ground truth.

pub mod aliasing;
pub mod energy;
pub mod error;
pub mod ingest;
pub mod modal;
mod serde_nan;
pub mod spectral;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
