pub mod analysis;
pub mod checkpoint;
pub mod error;
pub mod losses;
pub mod mildata;
pub mod milmodels;
pub mod numcore;
pub mod representation;

pub use error::{Error, Result};
