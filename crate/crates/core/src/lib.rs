pub mod audio;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod labeling;
pub mod model;
pub mod numerics;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
