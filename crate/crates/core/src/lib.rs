pub mod cluster;
pub mod diagnostic;
pub mod error;
pub mod infer;
pub mod matching;
pub mod metric;
pub mod model;
pub mod numerics;
pub mod outcome;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
