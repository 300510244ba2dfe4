//! Active statistical inference: model-guided label collection with valid
//! confidence intervals for means, quantiles and generalized linear models.

mod aipw;
pub mod batch;
pub mod betting;
pub mod cli;
pub mod composite;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod normal;
pub mod predictors;
pub mod report;
pub mod sampling;
pub mod sequential;

pub use error::{Error, Result};
