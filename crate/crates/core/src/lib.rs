pub mod error;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
