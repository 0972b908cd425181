pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod phantom;
pub mod postproc;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
