pub mod error;
pub mod eval;
pub mod experiment;
pub mod policy;
pub mod rollout;
pub mod seed;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
