pub mod dataset;
pub mod error;
pub mod frontend;
pub mod harness;
pub mod lif;
pub mod mapper;
pub mod matrix;
pub mod network;
pub mod pipeline;
pub mod plot;
pub mod quantizer;
pub mod raster;
pub mod trainer;
pub mod xylo;

pub use error::{Error, Result};
