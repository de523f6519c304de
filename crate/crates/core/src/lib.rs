//! Sensor-aware test-time inference over a simulated camera.
//!
//! A scene is captured under many exposure-triangle settings (ISO, shutter,
//! aperture). Each capture is digitally augmented and encoded by a frozen
//! [`provider::FeatureProvider`]. Captures whose feature statistics sit
//! closest to a source reference are kept, their lowest-entropy views vote,
//! and the plurality label is the prediction.
//!
//! Module map:
//!
//! * [`domain`]: sensor configs, views, layer statistics, pipeline parameters.
//! * [`capture`]: scene generation, the exposure/noise model, auto-exposure.
//! * [`provider`]: the encoder abstraction, a synthetic encoder, the
//!   file-backed encoder and the binary embedding formats.
//! * [`pipeline`]: augmentation, affinity scoring, top-k, entropy filtering,
//!   voting, and the per-scene method runners.
//! * [`csa`]: candidate selection policies and the capture-latency model.
//! * [`harness`]: experiment config, benchmark and sweep runners, reports.

pub mod capture;
pub mod csa;
pub mod domain;
pub mod error;
pub mod exec;
pub mod harness;
pub mod pipeline;
pub mod provider;
pub mod rng;

pub use error::{Error, Result};
