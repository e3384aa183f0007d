pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod stage;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
