//! Vessel operational anomaly detection.
//!
//! A semi-supervised pipeline for maritime telemetry: dense and LSTM
//! autoencoder detectors with percentile-calibrated thresholds, an
//! interpretable random-forest/decision-tree surrogate with rule extraction,
//! and a from-scratch t-SNE baseline map, plus a synthetic data generator
//! for the eight-signal vessel log format.

pub mod cli;
pub mod detector;
pub mod embed;
pub mod error;
pub mod ingest;
pub mod mat;
pub mod nn;
pub mod rng;
pub mod surrogate;
pub mod synth;

pub use error::{Error, Result};
