pub mod agents;
pub mod analysis;
pub mod conformal;
pub mod data;
pub mod error;
pub mod rng;
pub mod service;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
