pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod numcore;
pub mod pipeline;
pub mod quant;
pub mod train;

pub use error::{Error, Result};
