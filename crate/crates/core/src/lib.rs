pub mod algorithms;
pub mod compressors;
pub mod error;
pub mod kernels;
pub mod lowerbound;
pub mod oracle;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod worstcase;

pub use error::{Error, Result};
