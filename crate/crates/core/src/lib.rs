pub mod cat0;
pub mod energy;
pub mod error;
pub mod io;
pub mod mapping;
pub mod metric;
pub mod spectral;
pub mod target;

pub use error::{Error, Result};
