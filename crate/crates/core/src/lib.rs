pub mod cli;
pub mod corpus;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod recpo;
pub mod reward;
pub mod rng;
pub mod sampler;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;
