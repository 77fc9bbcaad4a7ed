//! Multi-interest user modeling with capsule dynamic routing, diversity
//! separators and top-N retrieval.

pub mod error;
pub mod eval;
pub mod extractor;
pub mod ingest;
pub mod numeric;
pub mod regularizers;
pub mod serving;
pub mod trainer;

pub use error::{DrimError, Result};
