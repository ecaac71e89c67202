//! Texture-statistics pipeline: dataset ingestion, preprocessing, cached
//! analysis stages and report figures on top of `texgram-core`.

pub mod brainscore;
pub mod cache;
pub mod config;
pub mod dataset;
pub mod error;
pub mod figures;
pub mod preprocess;
pub mod stages;

pub use config::{Overrides, PipelineConfig, Settings};
pub use error::PipelineError;
pub use stages::{Pipeline, Stage};
