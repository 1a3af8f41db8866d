//! Herding detection for multi-asset return panels.
//!
//! The pipeline runs price ingestion ([`panel`]) into cross-sectional
//! dispersion ([`dispersion`]), then static and event-augmented CSAD
//! regressions with residual diagnostics ([`regress`], [`events`]),
//! unit-root pretests ([`unitroot`]) and a K-regime Markov-switching herd
//! regression estimated by EM ([`msherd`]). [`synth`] holds generators and
//! brute-force oracles; [`report`] renders the text and JSON tables.

pub mod dispersion;
pub mod error;
pub mod events;
pub mod msherd;
pub mod panel;
pub mod regress;
pub mod report;
pub mod series;
pub mod synth;
pub mod unitroot;

mod linalg;

pub use error::{Error, Result};
pub use series::DatedSeries;
