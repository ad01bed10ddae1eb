pub mod beta;
pub mod covering;
pub mod error;
pub mod generators;
pub mod geometry;
pub mod measure;
pub mod neck;
pub mod reifmap;

pub use error::{Error, Result};
