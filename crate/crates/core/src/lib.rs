pub mod autodiff;
pub mod error;
pub mod evalkit;
pub mod ingest;
pub mod losses;
pub mod nn;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
