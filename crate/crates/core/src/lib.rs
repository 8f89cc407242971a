pub mod cs;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mri;
pub mod numcore;
pub mod rim;
pub mod sampling;
pub mod training;

pub use error::{Result, RimError};
