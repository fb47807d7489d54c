pub mod config;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod geom;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
