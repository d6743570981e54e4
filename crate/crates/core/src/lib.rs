//! Spatial-covariance codebooks for FDD massive MIMO.

pub mod channel;
pub mod codebook;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod multiuser;
pub mod plot;
pub mod rng;
pub mod table;
pub mod training;

pub use error::{Error, Result};
