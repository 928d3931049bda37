pub mod cli;
pub mod error;
pub mod linalg;
pub mod models;
pub mod poly;
pub mod quadrature;
pub mod sampling;
pub mod seeds;
pub mod stats;
pub mod symbolic;
pub mod transferop;

pub use error::{Error, Result};
