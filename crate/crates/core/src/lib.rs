//! Feature attribution for time-series models.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`]),
//! MLP and Elman RNN predictors ([`models`]), synthetic datasets with known
//! saliency ([`datasets`]), attribution methods ([`attribution`]) and
//! evaluation metrics ([`metrics`]). The [`cli`] module drives the
//! generate / train / attribute / evaluate pipeline used by the `tatk` binary.

pub mod attribution;
pub mod autodiff;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
