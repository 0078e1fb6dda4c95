pub mod datasets;
pub mod metrics;
pub mod digest;
pub mod error;
pub mod experiment;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod model;
pub mod train;
pub mod pruning;

pub use error::{Error, Result};

pub const TOOL_VERSION: &str = concat!("fmlab ", env!("CARGO_PKG_VERSION"));
