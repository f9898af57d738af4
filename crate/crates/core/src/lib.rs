pub mod augment;
pub mod data;
pub mod detection;
pub mod diagnose;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod grid;
pub mod head;
pub mod infer;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
pub use grid::Grid;
