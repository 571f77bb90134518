//! Simulation and finite-key analysis of source-independent quantum random
//! number generation with threshold detectors, under honest operation and
//! detector-blinding attacks.
//!
//! Rounds are simulated with [`session::run_session`], analysed with
//! [`security::key_length`] or [`security::analyze_counts`], compared
//! against closed-form expectations in [`rate`], hashed to certified output
//! with [`extractor::extract`], and checked with [`stats::run_battery`].
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar to `f64`.

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod bits;
pub mod detector;
pub mod error;
pub mod extractor;
pub mod optimize;
pub mod rate;
pub mod records;
pub mod scalar;
pub mod security;
pub mod session;
pub mod stats;

pub use bits::BitString;
pub use detector::{Basis, Category, ClickPattern, Treatment};
pub use error::{Error, Result};
pub use scalar::Real;
pub use session::TallySummary;

pub type DetectorBank64 = detector::DetectorBank<f64>;
pub type SignalSpec64 = detector::SignalSpec<f64>;
pub type AttackConfig64 = adversary::AttackConfig<f64>;
pub type ProtocolParams64 = session::ProtocolParams<f64>;
pub type SessionSource64 = session::SessionSource<f64>;
pub type SecurityParams64 = security::SecurityParams<f64>;
pub type AnalysisCounts64 = security::AnalysisCounts<f64>;
pub type AnalysisReport64 = security::AnalysisReport<f64>;
pub type ChannelModel64 = rate::ChannelModel<f64>;
pub type Optimum64 = optimize::Optimum<f64>;

pub type DetectorBank32 = detector::DetectorBank<f32>;
pub type SecurityParams32 = security::SecurityParams<f32>;
pub type ChannelModel32 = rate::ChannelModel<f32>;
