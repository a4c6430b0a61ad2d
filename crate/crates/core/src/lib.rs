pub mod density;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod model;
pub mod noise;
pub mod oracles;
pub mod quad;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
