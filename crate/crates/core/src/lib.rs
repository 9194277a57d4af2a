//! Multivariate Bayesian variable selection with group, predictor and
//! response-level indicators.

pub mod distributions;
pub mod error;
pub mod gibbs;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod model;
pub mod normal;
pub mod oracle;
pub mod pipeline;
pub mod simdata;

pub use error::{Error, Result};
