//! Pipeline orchestration for the chenflow toolkit: stage runners behind
//! the `chenflow` binary, the synthetic-corpus generator, and the CD/PD
//! ablation harness.

pub mod ablate;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod synth;

pub use config::PipelineConfig;
pub use synth::SyntheticSpec;
