pub mod circuit;
pub mod data;
pub mod diffqas;
pub mod engine;
pub mod error;
pub mod head;
pub mod linalg;
pub mod metrics;
pub mod training;

pub use error::{Block, Error, Result};
