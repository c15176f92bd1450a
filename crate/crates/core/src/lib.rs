pub mod config;
pub mod dataio;
pub mod detection;
pub mod error;
pub mod models;
pub mod physval;
pub mod stats;
pub mod synthgen;
pub mod training;

pub use error::{CoreError, Result};
