pub mod config;
pub mod ddce;
pub mod decoder;
pub mod error;
pub mod fading;
pub mod linalg;
pub mod modulation;
pub mod neural;
pub mod predictors;
pub mod sim;

pub use error::{Error, Result};
