//! Speaker-verification experiments: audio front end, artifact formats,
//! configuration and the staged pipeline built on `xvecforge-core`.

pub mod archive;
pub mod codec;
pub mod config;
pub mod error;
pub mod mfcc;
pub mod pipeline;
pub mod text;
pub mod wav;

pub use config::{PipelineConfig, System};
pub use error::{Error, Result};
pub use pipeline::{Pipeline, Stage};
