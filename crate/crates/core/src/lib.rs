//! Core of the bias bench: synthetic datasets with a known injected bias, a
//! small CNN engine, four attribution methods and the metrics that score
//! attribution maps against ground truth.

pub mod attrib;
pub mod binio;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod tensor;

pub use binio::Mask;
pub use error::{Error, Result};
pub use tensor::Tensor;
