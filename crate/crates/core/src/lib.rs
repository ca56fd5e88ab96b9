pub mod backbone;
pub mod binio;
pub mod data;
pub mod distillation;
pub mod error;
pub mod exec;
pub mod numerics;
pub mod oracle;
pub mod regularizers;
pub mod trainer;

pub use error::{Error, Result};
